//! View-generating augmentations for contrastive pretraining.
//!
//! The resampling augmentation builds two views of a series in three steps:
//! linear upsampling to `t_up` points, drawing two disjoint index subsets that
//! each cover every quarter of the upsampled grid, and stretching each subset
//! back onto the original `T`-point grid. Jittering, resize-cropping and time
//! masking are provided as baselines with the same shape contract.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{RngStream, TimeSeries};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Sizes for the resampling augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplingConfig {
    /// Length of the upsampled series.
    pub t_up: usize,
    /// Number of upsampled timesteps kept by each view.
    pub t_int: [usize; 2],
}

impl ResamplingConfig {
    /// Midpoint-insertion upsampling (`2T - 1`) and half-length views.
    pub fn for_len(len: usize) -> Self {
        Self { t_up: 2 * len - 1, t_int: [len / 2, len / 2] }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &n) in self.t_int.iter().enumerate() {
            if n < 4 {
                bail!(Argument, "t_int[{i}] = {n} must be at least 4 (one point per quarter)");
            }
        }
        if self.t_int[0] + self.t_int[1] > self.t_up {
            bail!(Argument, "t_int {:?} do not fit disjointly in t_up = {}", self.t_int, self.t_up);
        }
        // floor(a/4) + floor(b/4) <= floor(t_up/4), the smallest quarter size,
        // so the per-quarter minimums always fit once the totals do.
        Ok(())
    }

    pub fn validate_for(&self, len: usize) -> Result<()> {
        if self.t_up < len {
            bail!(Argument, "t_up = {} is shorter than the series ({len})", self.t_up);
        }
        self.validate()
    }
}

/// Disjoint, strictly increasing index lists into the upsampled grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexPair {
    pub x1: Vec<usize>,
    pub x2: Vec<usize>,
}

impl IndexPair {
    pub fn views(&self) -> [&[usize]; 2] {
        [&self.x1, &self.x2]
    }
}

/// Quarter (0-based) of index `u` in `0..t_up`: quarter `j` spans
/// `j*t_up/4 <= u < (j+1)*t_up/4`, with the last quarter closed.
#[inline]
pub fn quarter_of(u: usize, t_up: usize) -> usize {
    ((4 * u) / t_up).min(3)
}

pub fn quarter_sizes(t_up: usize) -> [usize; 4] {
    let mut sizes = [0; 4];
    for u in 0..t_up {
        sizes[quarter_of(u, t_up)] += 1;
    }
    sizes
}

/// Piecewise-linear evaluation of knots `(xs[k], rows[k])` at sorted `queries`.
/// Queries must lie within `[xs[0], xs[last]]`.
fn interpolate<T: Scalar>(xs: &[f64], rows: &[T], channels: usize, queries: impl Iterator<Item = f64>, out: &mut Vec<T>) {
    let last = xs.len() - 1;
    let mut k = 0;
    for q in queries {
        while k < last && xs[k + 1] <= q {
            k += 1;
        }
        if k == last {
            out.extend_from_slice(&rows[last * channels..(last + 1) * channels]);
            continue;
        }
        let frac = T::lit((q - xs[k]) / (xs[k + 1] - xs[k]));
        let (a, b) = (&rows[k * channels..(k + 1) * channels], &rows[(k + 1) * channels..(k + 2) * channels]);
        out.extend(a.iter().zip(b).map(|(&a, &b)| a + frac * (b - a)));
    }
}

/// Linear interpolation of `s` at `t_up` equispaced positions spanning its
/// full range; channels are interpolated independently and both endpoints are
/// reproduced exactly.
pub fn upsample<T: Scalar>(s: &TimeSeries<T>, t_up: usize) -> Result<TimeSeries<T>> {
    let len = s.len();
    if t_up < len {
        bail!(Argument, "t_up = {t_up} is shorter than the series ({len})");
    }
    let xs: Vec<f64> = (0..len).map(|t| t as f64).collect();
    let span = (len - 1) as f64;
    let denom = (t_up - 1) as f64;
    let mut out = Vec::with_capacity(t_up * s.channels());
    interpolate(&xs, s.values(), s.channels(), (0..t_up).map(|i| i as f64 * span / denom), &mut out);
    Ok(TimeSeries::from_parts(t_up, s.channels(), out))
}

/// Draws the two view index sets.
///
/// Each view first takes `floor(t_int/4)` indices uniformly without
/// replacement inside every quarter (view 1 then view 2, per quarter), then
/// both are topped up to their lengths from the still-unused indices. Both the
/// disjointness and the per-quarter minimum hold by construction.
pub fn sample_disjoint_indices(cfg: &ResamplingConfig, rng: &mut RngStream) -> Result<IndexPair> {
    cfg.validate()?;
    let t_up = cfg.t_up;
    let mut quarters: [Vec<usize>; 4] = Default::default();
    for u in 0..t_up {
        quarters[quarter_of(u, t_up)].push(u);
    }
    let mut used = vec![false; t_up];
    let mut views: [Vec<usize>; 2] = [Vec::with_capacity(cfg.t_int[0]), Vec::with_capacity(cfg.t_int[1])];

    for quarter in &quarters {
        for (v, view) in views.iter_mut().enumerate() {
            let free: Vec<usize> = quarter.iter().copied().filter(|&u| !used[u]).collect();
            for i in index::sample(rng, free.len(), cfg.t_int[v] / 4) {
                used[free[i]] = true;
                view.push(free[i]);
            }
        }
    }
    for (v, view) in views.iter_mut().enumerate() {
        let free: Vec<usize> = (0..t_up).filter(|&u| !used[u]).collect();
        for i in index::sample(rng, free.len(), cfg.t_int[v] - view.len()) {
            used[free[i]] = true;
            view.push(free[i]);
        }
        view.sort_unstable();
    }
    let [x1, x2] = views;
    Ok(IndexPair { x1, x2 })
}

/// Stretches a subsequence onto the grid `0..len`.
///
/// `values` holds `indices.len()` rows of `channels` values. The timestamps are
/// mapped affinely with the first index to 0 and the last to `len - 1`, then
/// the result is linearly interpolated at every integer position.
pub fn realign<T: Scalar>(values: &[T], channels: usize, indices: &[usize], len: usize) -> Result<TimeSeries<T>> {
    if indices.len() < 2 {
        bail!(Argument, "realign needs at least 2 points, got {}", indices.len());
    }
    if channels == 0 || values.len() != indices.len() * channels {
        bail!(Argument, "expected {} values, got {}", indices.len() * channels, values.len());
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        bail!(Argument, "indices must be strictly increasing");
    }
    if len < 2 {
        bail!(Argument, "target length must be at least 2");
    }
    let first = indices[0] as f64;
    let width = (indices[indices.len() - 1] - indices[0]) as f64;
    let scale = (len - 1) as f64;
    let xs: Vec<f64> = indices.iter().map(|&u| (u as f64 - first) * scale / width).collect();
    let mut out = Vec::with_capacity(len * channels);
    interpolate(&xs, values, channels, (0..len).map(|t| t as f64), &mut out);
    Ok(TimeSeries::from_parts(len, channels, out))
}

fn gather<T: Scalar>(s: &TimeSeries<T>, indices: &[usize]) -> Vec<T> {
    let c = s.channels();
    indices.iter().flat_map(|&u| s.values()[u * c..(u + 1) * c].iter().copied()).collect()
}

/// Applies an already drawn index pair to one series.
pub fn resample_with<T: Scalar>(s: &TimeSeries<T>, cfg: &ResamplingConfig, pair: &IndexPair) -> Result<(TimeSeries<T>, TimeSeries<T>)> {
    cfg.validate_for(s.len())?;
    let up = upsample(s, cfg.t_up)?;
    let [a, b] = pair.views().map(|x| realign(&gather(&up, x), s.channels(), x, s.len()));
    Ok((a?, b?))
}

/// Two resampled views of one series.
pub fn resampling_pair<T: Scalar>(s: &TimeSeries<T>, cfg: &ResamplingConfig, rng: &mut RngStream) -> Result<(TimeSeries<T>, TimeSeries<T>)> {
    cfg.validate_for(s.len())?;
    let pair = sample_disjoint_indices(cfg, rng)?;
    resample_with(s, cfg, &pair)
}

fn channel_std<T: Scalar>(s: &TimeSeries<T>) -> Vec<T> {
    let n = T::lit(s.len() as f64);
    (0..s.channels())
        .map(|c| {
            let mean = s.channel(c).sum::<T>() / n;
            (s.channel(c).map(|v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt()
        })
        .collect()
}

/// Adds i.i.d. Gaussian noise with per-channel standard deviation
/// `sigma * std(channel)`.
pub fn jitter<T: Scalar>(s: &TimeSeries<T>, sigma: f64, rng: &mut RngStream) -> Result<TimeSeries<T>> {
    if !(sigma >= 0.0) {
        bail!(Argument, "jitter sigma must be non-negative, got {sigma}");
    }
    if sigma == 0.0 {
        return Ok(s.clone());
    }
    let scale: Vec<T> = channel_std(s).into_iter().map(|sd| sd * T::lit(sigma)).collect();
    let c = s.channels();
    let values = s
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + scale[i % c] * T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok(TimeSeries::from_parts(s.len(), c, values))
}

/// Crop window drawn by [`draw_crop`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub start: usize,
    pub len: usize,
}

pub fn draw_crop(len: usize, scale_range: (f64, f64), rng: &mut RngStream) -> Result<CropWindow> {
    let (low, high) = scale_range;
    if !(low > 0.0 && low <= high && high <= 1.0) {
        bail!(Argument, "scale range ({low}, {high}) must satisfy 0 < low <= high <= 1");
    }
    let r = if low == high { low } else { rng.gen_range(low..=high) };
    let crop = ((r * len as f64).ceil() as usize).min(len);
    if crop < 2 {
        bail!(Argument, "crop length {crop} is shorter than 2");
    }
    let start = rng.gen_range(0..=len - crop);
    Ok(CropWindow { start, len: crop })
}

pub fn apply_crop<T: Scalar>(s: &TimeSeries<T>, w: CropWindow) -> Result<TimeSeries<T>> {
    if w.len < 2 || w.start + w.len > s.len() {
        bail!(Argument, "crop {w:?} does not fit a series of length {}", s.len());
    }
    let c = s.channels();
    let indices: Vec<usize> = (w.start..w.start + w.len).collect();
    realign(&s.values()[w.start * c..(w.start + w.len) * c], c, &indices, s.len())
}

/// Random contiguous crop of `ceil(r*T)` steps, `r ~ U(scale_range)`,
/// stretched back to `T` steps.
pub fn resize_crop<T: Scalar>(s: &TimeSeries<T>, scale_range: (f64, f64), rng: &mut RngStream) -> Result<TimeSeries<T>> {
    let w = draw_crop(s.len(), scale_range, rng)?;
    apply_crop(s, w)
}

/// Sorted timesteps zeroed by a mask of the given ratio.
pub fn draw_mask(len: usize, ratio: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&ratio) {
        bail!(Argument, "mask ratio must be in [0, 1), got {ratio}");
    }
    let n = (ratio * len as f64).floor() as usize;
    let mut steps = index::sample(rng, len, n).into_vec();
    steps.sort_unstable();
    Ok(steps)
}

pub fn apply_mask<T: Scalar>(s: &TimeSeries<T>, steps: &[usize]) -> TimeSeries<T> {
    let c = s.channels();
    let mut values = s.values().to_vec();
    for &t in steps {
        values[t * c..(t + 1) * c].fill(T::zero());
    }
    TimeSeries::from_parts(s.len(), c, values)
}

/// Zeroes all channels at `floor(ratio*T)` distinct uniformly drawn timesteps.
pub fn time_mask<T: Scalar>(s: &TimeSeries<T>, ratio: f64, rng: &mut RngStream) -> Result<TimeSeries<T>> {
    let steps = draw_mask(s.len(), ratio, rng)?;
    Ok(apply_mask(s, &steps))
}

pub const DEFAULT_JITTER_SIGMA: f64 = 0.03;
pub const DEFAULT_RESIZE_RANGE: (f64, f64) = (0.5, 1.0);
pub const DEFAULT_MASK_RATIO: f64 = 0.3;

/// Augmentation strategy used to build positive pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum Augmentation {
    Jitter { sigma: f64 },
    Resize { scale_range: (f64, f64) },
    Mask { ratio: f64 },
    /// `config = None` derives the sizes from the series length.
    Resampling { config: Option<ResamplingConfig>, per_series: bool },
}

impl Augmentation {
    pub fn jitter() -> Self {
        Augmentation::Jitter { sigma: DEFAULT_JITTER_SIGMA }
    }

    pub fn resize() -> Self {
        Augmentation::Resize { scale_range: DEFAULT_RESIZE_RANGE }
    }

    pub fn mask() -> Self {
        Augmentation::Mask { ratio: DEFAULT_MASK_RATIO }
    }

    pub fn resampling() -> Self {
        Augmentation::Resampling { config: None, per_series: false }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::Jitter { .. } => "jittering",
            Augmentation::Resize { .. } => "resizing",
            Augmentation::Mask { .. } => "masking",
            Augmentation::Resampling { .. } => "resampling",
        }
    }

    /// Parses the strategy names used in configs (`jitter`, `resize`, `mask`,
    /// `resample`, or their `-ing` forms) with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "jitter" | "jittering" => Self::jitter(),
            "resize" | "resizing" => Self::resize(),
            "mask" | "masking" => Self::mask(),
            "resample" | "resampling" => Self::resampling(),
            other => bail!(Config, "unknown augmentation '{other}'"),
        })
    }

    /// Position in the usual results-table order (raw features come first).
    pub fn table_rank(&self) -> usize {
        match self {
            Augmentation::Jitter { .. } => 1,
            Augmentation::Resize { .. } => 2,
            Augmentation::Mask { .. } => 3,
            Augmentation::Resampling { .. } => 4,
        }
    }

    /// Two views of an aligned group of series. Random draws that do not
    /// depend on values (crop window, mask steps, resampling indices) are made
    /// once per view and shared by every series of the group; jitter noise is
    /// independent per element.
    pub fn views<T: Scalar>(&self, group: &[&TimeSeries<T>], rng: &mut RngStream) -> Result<(Vec<TimeSeries<T>>, Vec<TimeSeries<T>>)> {
        let Some(first) = group.first() else {
            bail!(Argument, "empty group");
        };
        let len = first.len();
        let mut v1 = Vec::with_capacity(group.len());
        let mut v2 = Vec::with_capacity(group.len());
        match self {
            Augmentation::Jitter { sigma } => {
                for s in group {
                    v1.push(jitter(s, *sigma, rng)?);
                }
                for s in group {
                    v2.push(jitter(s, *sigma, rng)?);
                }
            }
            Augmentation::Resize { scale_range } => {
                let (w1, w2) = (draw_crop(len, *scale_range, rng)?, draw_crop(len, *scale_range, rng)?);
                for s in group {
                    v1.push(apply_crop(s, w1)?);
                    v2.push(apply_crop(s, w2)?);
                }
            }
            Augmentation::Mask { ratio } => {
                let (m1, m2) = (draw_mask(len, *ratio, rng)?, draw_mask(len, *ratio, rng)?);
                for s in group {
                    v1.push(apply_mask(s, &m1));
                    v2.push(apply_mask(s, &m2));
                }
            }
            Augmentation::Resampling { config, per_series } => {
                let cfg = config.unwrap_or_else(|| ResamplingConfig::for_len(len));
                cfg.validate_for(len)?;
                let shared = if *per_series { None } else { Some(sample_disjoint_indices(&cfg, rng)?) };
                for s in group {
                    let pair = match &shared {
                        Some(p) => p.clone(),
                        None => sample_disjoint_indices(&cfg, rng)?,
                    };
                    let (a, b) = resample_with(s, &cfg, &pair)?;
                    v1.push(a);
                    v2.push(b);
                }
            }
        }
        Ok((v1, v2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG_SERIES: [f64; 8] = [5.0, 15.0, 32.5, 28.5, 12.5, 7.5, 11.0, 2.5];

    fn random_series(rng: &mut RngStream, len: usize, channels: usize) -> TimeSeries<f64> {
        TimeSeries::new(len, channels, (0..len * channels).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn upsample_inserts_midpoints() {
        let s = TimeSeries::from_column(&FIG_SERIES).unwrap();
        let up = upsample(&s, 15).unwrap();
        let expected = [5.0, 10.0, 15.0, 23.75, 32.5, 30.5, 28.5, 20.5, 12.5, 10.0, 7.5, 9.25, 11.0, 6.75, 2.5];
        assert_eq!(up.values(), &expected);
    }

    #[test]
    fn upsample_rejects_shrinking() {
        let s = TimeSeries::from_column(&FIG_SERIES).unwrap();
        assert!(upsample(&s, 7).is_err());
    }

    #[test]
    fn upsample_identity_and_constant() {
        let mut rng = RngStream::new(0, 0);
        let s = random_series(&mut rng, 13, 3);
        assert_eq!(upsample(&s, 13).unwrap(), s);
        let c = TimeSeries::new(9, 2, vec![0.7f32; 18]).unwrap();
        assert!(upsample(&c, 40).unwrap().values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn quarters_partition_the_grid() {
        assert_eq!(quarter_sizes(15), [4, 4, 4, 3]);
        assert_eq!(quarter_sizes(119), [30, 30, 30, 29]);
        assert_eq!(quarter_sizes(16), [4, 4, 4, 4]);
    }

    #[test]
    fn illustrative_draw_satisfies_constraints() {
        let x1 = [0usize, 3, 6, 9, 14];
        let x2 = [1usize, 4, 7, 10, 12, 13];
        assert!(x1.iter().all(|u| !x2.contains(u)));
        for x in [&x1[..], &x2[..]] {
            for j in 0..4 {
                assert!(x.iter().filter(|&&u| quarter_of(u, 15) == j).count() >= x.len() / 4);
            }
        }
    }

    #[test]
    fn saturated_lengths_cover_everything() {
        let cfg = ResamplingConfig { t_up: 16, t_int: [8, 8] };
        let mut rng = RngStream::new(3, 3);
        for _ in 0..100 {
            let p = sample_disjoint_indices(&cfg, &mut rng).unwrap();
            let mut all: Vec<usize> = p.x1.iter().chain(&p.x2).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..16).collect::<Vec<_>>());
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        assert!(ResamplingConfig { t_up: 15, t_int: [3, 4] }.validate().is_err());
        assert!(ResamplingConfig { t_up: 15, t_int: [8, 8] }.validate().is_err());
        assert!(ResamplingConfig { t_up: 15, t_int: [8, 4] }.validate().is_ok());
        assert!(ResamplingConfig::for_len(8).validate().is_ok());
        assert!(ResamplingConfig::for_len(60).validate().is_ok());
        assert!(ResamplingConfig { t_up: 10, t_int: [4, 4] }.validate_for(12).is_err());
    }

    #[test]
    fn realign_identity() {
        let mut rng = RngStream::new(1, 1);
        let s = random_series(&mut rng, 10, 2);
        let idx: Vec<usize> = (0..10).collect();
        assert_eq!(realign(s.values(), 2, &idx, 10).unwrap(), s);
    }

    #[test]
    fn realign_two_points_is_a_line() {
        let out = realign(&[5.0f64, 2.5], 1, &[0, 14], 8).unwrap();
        for (t, v) in out.values().iter().enumerate() {
            let line = 5.0 - 2.5 * t as f64 / 7.0;
            assert!((v - line).abs() < 1e-12, "{t}: {v} vs {line}");
        }
        assert!((out.values()[1] - 4.642857142857143).abs() < 1e-12);
    }

    #[test]
    fn realign_keeps_endpoints_of_figure_view() {
        let s = TimeSeries::from_column(&FIG_SERIES).unwrap();
        let up = upsample(&s, 15).unwrap();
        let x1 = [0usize, 3, 6, 9, 14];
        let out = realign(&gather(&up, &x1), 1, &x1, 8).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out.values()[0], 5.0);
        assert_eq!(out.values()[7], 2.5);
    }

    #[test]
    fn realign_errors() {
        assert!(realign(&[1.0f64], 1, &[3], 8).is_err());
        assert!(realign(&[1.0f64, 2.0], 1, &[3, 3], 8).is_err());
        assert!(realign(&[1.0f64, 2.0, 3.0], 1, &[3, 4], 8).is_err());
    }

    #[test]
    fn resampling_fixed_points() {
        let mut rng = RngStream::new(9, 0);
        let cfg = ResamplingConfig::for_len(20);
        let c = TimeSeries::new(20, 2, vec![1.25f64; 40]).unwrap();
        let (a, b) = resampling_pair(&c, &cfg, &mut rng).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, c);
        let ramp = TimeSeries::new(20, 2, (0..40).map(|i| (i / 2) as f64 * 0.5 - 3.0 + (i % 2) as f64).collect()).unwrap();
        // views of an affine series are affine (stretched onto the full grid)
        for _ in 0..20 {
            let (a, b) = resampling_pair(&ramp, &cfg, &mut rng).unwrap();
            for v in [a, b] {
                for c in 0..2 {
                    let x: Vec<f64> = v.channel(c).collect();
                    assert!(x.windows(3).all(|w| (w[0] - 2.0 * w[1] + w[2]).abs() < 1e-9));
                }
            }
        }
    }

    #[test]
    fn resampling_views_stay_in_hull() {
        let mut rng = RngStream::new(11, 0);
        let cfg = ResamplingConfig::for_len(30);
        for _ in 0..1000 {
            let s = random_series(&mut rng, 30, 2);
            let (a, b) = resampling_pair(&s, &cfg, &mut rng).unwrap();
            for c in 0..2 {
                let lo = s.channel(c).fold(f64::INFINITY, f64::min);
                let hi = s.channel(c).fold(f64::NEG_INFINITY, f64::max);
                for v in a.channel(c).chain(b.channel(c)) {
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn resampling_is_deterministic() {
        let mut rng = RngStream::new(2, 0);
        let s = random_series(&mut rng, 24, 3);
        let cfg = ResamplingConfig::for_len(24);
        let a = resampling_pair(&s, &cfg, &mut RngStream::new(5, 5)).unwrap();
        let b = resampling_pair(&s, &cfg, &mut RngStream::new(5, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_zero_is_identity_and_noise_scales_with_std() {
        let mut rng = RngStream::new(4, 0);
        let s = random_series(&mut rng, 30, 2);
        assert_eq!(jitter(&s, 0.0, &mut rng).unwrap(), s);
        assert!(jitter(&s, -1.0, &mut rng).is_err());
        let flat = TimeSeries::new(10, 1, vec![3.0f64; 10]).unwrap();
        // zero std means zero noise
        assert_eq!(jitter(&flat, 0.5, &mut rng).unwrap(), flat);
    }

    #[test]
    fn jitter_preserves_mean_within_clt_bound() {
        let mut rng = RngStream::new(6, 0);
        let (len, sigma) = (60usize, 0.03);
        let s = random_series(&mut rng, len, 2);
        let std = channel_std(&s);
        for _ in 0..200 {
            let j = jitter(&s, sigma, &mut rng).unwrap();
            assert_eq!((j.len(), j.channels()), (len, 2));
            for c in 0..2 {
                let m0: f64 = s.channel(c).sum::<f64>() / len as f64;
                let m1: f64 = j.channel(c).sum::<f64>() / len as f64;
                let noise_sd = sigma * std[c];
                assert!((m1 - m0).abs() <= 4.0 * noise_sd / (len as f64).sqrt());
            }
        }
    }

    #[test]
    fn resize_crop_identity_shape_constant() {
        let mut rng = RngStream::new(7, 0);
        let s = random_series(&mut rng, 16, 2);
        assert_eq!(resize_crop(&s, (1.0, 1.0), &mut rng).unwrap(), s);
        for _ in 0..50 {
            let r = resize_crop(&s, (0.5, 1.0), &mut rng).unwrap();
            assert_eq!((r.len(), r.channels()), (16, 2));
        }
        let c = TimeSeries::new(16, 1, vec![0.3f64; 16]).unwrap();
        assert!(resize_crop(&c, (0.3, 0.9), &mut rng).unwrap().values().iter().all(|&v| v == 0.3));
        assert!(resize_crop(&s, (0.0, 0.5), &mut rng).is_err());
        assert!(resize_crop(&s, (0.01, 0.01), &mut rng).is_err());
    }

    #[test]
    fn time_mask_counts() {
        let mut rng = RngStream::new(8, 0);
        let s = TimeSeries::new(20, 3, (0..60).map(|i| 1.0 + i as f64).collect()).unwrap();
        assert_eq!(time_mask(&s, 0.0, &mut rng).unwrap(), s);
        assert!(time_mask(&s, 1.0, &mut rng).is_err());
        let m = time_mask(&s, 0.35, &mut rng).unwrap();
        let zero_rows: Vec<usize> = (0..20).filter(|&t| (0..3).all(|c| m.at(t, c) == 0.0)).collect();
        assert_eq!(zero_rows.len(), 7);
        for t in (0..20).filter(|t| !zero_rows.contains(t)) {
            for c in 0..3 {
                assert_eq!(m.at(t, c).to_bits(), s.at(t, c).to_bits());
            }
        }
    }

    #[test]
    fn group_views_share_draws() {
        let mut rng = RngStream::new(10, 0);
        let s = TimeSeries::new(16, 1, (0..16).map(|i| 1.0 + (i as f32 * 1.3).sin()).collect()).unwrap();
        let group = [&s, &s, &s];
        for aug in [Augmentation::mask(), Augmentation::resize(), Augmentation::resampling()] {
            let (v1, v2) = aug.views(&group, &mut rng).unwrap();
            assert_eq!(v1.len(), 3);
            assert!(v1.iter().all(|v| v == &v1[0]), "{}", aug.name());
            assert!(v2.iter().all(|v| v == &v2[0]), "{}", aug.name());
        }
        let per = Augmentation::Resampling { config: None, per_series: true };
        let (v1, _) = per.views(&group, &mut rng).unwrap();
        assert!(v1.iter().any(|v| v != &v1[0]));
    }

    #[test]
    fn names_round_trip() {
        for name in ["jitter", "resize", "mask", "resample"] {
            let a = Augmentation::from_name(name).unwrap();
            assert_eq!(Augmentation::from_name(a.name()).unwrap(), a);
        }
        assert!(Augmentation::from_name("flip").is_err());
    }
}
