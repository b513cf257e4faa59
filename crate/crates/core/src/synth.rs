//! Synthetic crop-like dataset generator.
//!
//! Each class has a double-bump phenology curve (two growing seasons of
//! different timing and strength) and per-channel responses to it. Samples
//! (parcels) shift and stretch the curve in time; their series (pixels) add
//! small gain/offset perturbations, Gaussian noise and upward cloud spikes.
//! Values are clipped to `[0, 1]` like reflectances.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{purpose, Dataset, RngStream, Sample, SplitTag, TimeSeries, MIN_TIMESTEPS};
use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub len: usize,
    pub channels: usize,
    pub n_series: usize,
    pub unlabeled: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Std of the additive Gaussian noise.
    pub noise: f64,
    /// Per-timestep probability of a cloud spike.
    pub dropout: f64,
    /// Maximum temporal shift of a sample, in time steps.
    pub max_shift: f64,
    /// Maximum relative stretch of a sample's time axis.
    pub max_stretch: f64,
    /// Scale of the class-specific deviation from the shared spectral response.
    pub spectral_separation: f64,
    /// Set from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            len: 60,
            channels: 12,
            n_series: 8,
            unlabeled: 2048,
            train_per_class: 100,
            val_per_class: 10,
            test_per_class: 50,
            noise: 0.03,
            dropout: 0.05,
            max_shift: 6.0,
            max_stretch: 0.15,
            spectral_separation: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.channels == 0 || self.n_series == 0 {
            bail!(Config, "generator needs >= 2 classes, >= 1 channel and >= 1 series per sample");
        }
        if self.len < MIN_TIMESTEPS {
            bail!(Config, "series length {} below the minimum {MIN_TIMESTEPS}", self.len);
        }
        if !(self.spectral_separation >= 0.0) || !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.max_shift >= 0.0) || !(0.0..1.0).contains(&self.max_stretch) {
            bail!(Config, "invalid noise / dropout / shift / stretch settings");
        }
        Ok(())
    }

    pub fn split_size(&self, split: SplitTag) -> usize {
        match split {
            SplitTag::Unlabeled => self.unlabeled,
            SplitTag::Train => self.train_per_class * self.n_classes,
            SplitTag::Val => self.val_per_class * self.n_classes,
            SplitTag::Test => self.test_per_class * self.n_classes,
        }
    }
}

/// Phenology of one class and its per-channel responses.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProfile {
    /// `(center, width, height)` of each bump, centers in `[0, 1]`.
    pub bumps: [(f64, f64, f64); 2],
    /// Per-channel `(base, gain)`; the gain may be negative.
    pub response: Vec<(f64, f64)>,
}

impl ClassProfile {
    fn draw(c: usize, n_classes: usize, shared: &[(f64, f64)], separation: f64, rng: &mut RngStream) -> Self {
        // spread first-season timing over the classes so they are separable
        // in principle but overlap once shifts and noise are added
        let slot = c as f64 / n_classes as f64;
        let c1 = 0.2 + 0.3 * slot + rng.gen_range(-0.03..0.03);
        let c2 = (c1 + rng.gen_range(0.25..0.45)).min(0.92);
        let bumps = [
            (c1, rng.gen_range(0.05..0.1), rng.gen_range(0.6..1.0)),
            (c2, rng.gen_range(0.04..0.09), rng.gen_range(0.15..0.7)),
        ];
        let response = shared
            .iter()
            .map(|&(b, g)| (b + separation * rng.gen_range(-0.1..0.1), g + separation * rng.gen_range(-0.3..0.3)))
            .collect();
        Self { bumps, response }
    }

    /// Phenology at relative time `u`.
    pub fn curve(&self, u: f64) -> f64 {
        self.bumps.iter().map(|&(m, w, h)| h * (-0.5 * ((u - m) / w).powi(2)).exp()).sum()
    }
}

/// All classes share one spectral response (vegetation looks alike) plus a
/// small class-specific deviation; they differ mostly in phenology.
pub fn class_profiles(cfg: &SynthConfig) -> Vec<ClassProfile> {
    let mut rng = RngStream::derive(cfg.seed, purpose::SYNTH, &[0]);
    let shared: Vec<(f64, f64)> = (0..cfg.channels).map(|_| (rng.gen_range(0.05..0.3), rng.gen_range(-0.2..0.5))).collect();
    (0..cfg.n_classes)
        .map(|c| ClassProfile::draw(c, cfg.n_classes, &shared, cfg.spectral_separation, &mut RngStream::derive(cfg.seed, purpose::SYNTH, &[0, 1 + c as u64])))
        .collect()
}

fn split_code(split: SplitTag) -> u64 {
    match split {
        SplitTag::Unlabeled => 1,
        SplitTag::Train => 2,
        SplitTag::Val => 3,
        SplitTag::Test => 4,
    }
}

fn draw_sample(cfg: &SynthConfig, profile: &ClassProfile, label: Option<u32>, rng: &mut RngStream) -> Result<Sample> {
    let (t, ch) = (cfg.len, cfg.channels);
    let shift = rng.gen_range(-cfg.max_shift..=cfg.max_shift) / t as f64;
    let stretch = 1.0 + rng.gen_range(-cfg.max_stretch..=cfg.max_stretch);
    let amp: f64 = Normal::new(1.0, 0.1).expect("valid normal").sample(rng);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let curve: Vec<f64> = (0..t)
        .map(|i| {
            let u = i as f64 / (t - 1) as f64;
            amp * profile.curve((u - 0.5) / stretch + 0.5 - shift)
        })
        .collect();
    let mut series = Vec::with_capacity(cfg.n_series);
    for _ in 0..cfg.n_series {
        let gain: f64 = 1.0 + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let offsets: Vec<f64> = (0..ch).map(|_| 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let mut values = Vec::with_capacity(t * ch);
        for &p in &curve {
            let cloud = if rng.gen::<f64>() < cfg.dropout { rng.gen_range(0.3..0.6) } else { 0.0 };
            for (c, &(base, g)) in profile.response.iter().enumerate() {
                let v = base + offsets[c] + gain * g * p + cloud + if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                values.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        series.push(TimeSeries::new(t, ch, values)?);
    }
    Sample::new(series, label)
}

/// One split; labeled splits are class-balanced, unlabeled samples have their
/// class drawn uniformly. Every sample has its own stream, so splits are
/// independent of each other and of their sizes.
pub fn generate_split(cfg: &SynthConfig, split: SplitTag) -> Result<Dataset> {
    cfg.validate()?;
    let profiles = class_profiles(cfg);
    let n = cfg.split_size(split);
    if n == 0 {
        bail!(Config, "{split} split is empty");
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = RngStream::derive(cfg.seed, purpose::SYNTH, &[split_code(split), i as u64]);
            let class = match split {
                SplitTag::Unlabeled => rng.gen_range(0..cfg.n_classes),
                _ => i % cfg.n_classes,
            };
            let label = (split != SplitTag::Unlabeled).then_some(class as u32);
            draw_sample(cfg, &profiles[class], label, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, cfg.n_classes, split)
}

#[derive(Clone, Debug)]
pub struct SynthSplits {
    pub unlabeled: Dataset,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthSplits> {
    Ok(SynthSplits {
        unlabeled: generate_split(cfg, SplitTag::Unlabeled)?,
        train: generate_split(cfg, SplitTag::Train)?,
        val: generate_split(cfg, SplitTag::Val)?,
        test: generate_split(cfg, SplitTag::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode_dataset;

    fn small() -> SynthConfig {
        SynthConfig { unlabeled: 20, train_per_class: 3, val_per_class: 1, test_per_class: 2, ..SynthConfig::default() }
    }

    #[test]
    fn shapes_and_balance() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.unlabeled.len(), 20);
        assert!(!s.unlabeled.has_labels());
        assert_eq!(s.train.len(), 24);
        let counts = s.train.indices_by_class().unwrap();
        assert!(counts.iter().all(|c| c.len() == 3));
        let shape = s.test.shape();
        assert_eq!((shape.n_series, shape.len, shape.channels), (8, 60, 12));
        for smp in s.train.samples() {
            for ts in &smp.series {
                assert!(ts.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_split(&small(), SplitTag::Val).unwrap();
        let b = generate_split(&small(), SplitTag::Val).unwrap();
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
        let c = generate_split(&SynthConfig { seed: 1, ..small() }, SplitTag::Val).unwrap();
        assert_ne!(encode_dataset(&a).unwrap(), encode_dataset(&c).unwrap());
    }

    #[test]
    fn noiseless_series_share_the_class_curve() {
        let cfg = SynthConfig { noise: 0.0, dropout: 0.0, ..small() };
        let s = generate_split(&cfg, SplitTag::Train).unwrap();
        // pixels of one parcel differ only by gain/offset: strongly correlated
        let smp = &s.samples()[0];
        let profile = &class_profiles(&cfg)[smp.label.unwrap() as usize];
        let ch = (0..cfg.channels).max_by(|&i, &j| profile.response[i].1.abs().total_cmp(&profile.response[j].1.abs())).unwrap();
        let a: Vec<f32> = smp.series[0].channel(ch).collect();
        let b: Vec<f32> = smp.series[1].channel(ch).collect();
        let ma = a.iter().sum::<f32>() / a.len() as f32;
        let mb = b.iter().sum::<f32>() / b.len() as f32;
        let cov: f32 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f32 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f32 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!(cov / (va * vb).sqrt() > 0.9);
    }
}
