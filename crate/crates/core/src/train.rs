//! Self-supervised pretraining: one-cycle schedule, SGD with momentum and
//! weight decay, batch assembly with group selection and paired views, and
//! validation-based checkpoint selection.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::Augmentation;
use crate::data::{purpose, select_group, Dataset, RngStream, TimeSeries};
use crate::error::{bail, Error, Result};
use crate::eval::{extract_features, Features, LinearProbe, ProbeConfig};
use crate::nn::{encode_checkpoint, series_to_tensor, Checkpoint, Mode, Module, NetworkConfig, Param, SslNetwork, Tensor};
use crate::scalar::Scalar;
use crate::ssl::{self, collapse_report, CollapseReport, Framework, KeyQueue, SslConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Series drawn per sample and averaged into one representation.
    pub group_size: usize,
    pub eval_every: usize,
    /// Set from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 128,
            base_lr: 2e-3,
            peak_lr: 5e-2,
            final_lr: 5e-5,
            warmup_fraction: 0.2,
            weight_decay: 5e-4,
            momentum: 0.9,
            group_size: 4,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            bail!(Config, "warmup fraction must be in (0, 1), got {}", self.warmup_fraction);
        }
        if [self.base_lr, self.peak_lr, self.final_lr].iter().any(|&lr| !(lr > 0.0)) {
            bail!(Config, "learning rates must be positive");
        }
        if self.batch_size == 0 || self.group_size == 0 || self.eval_every == 0 {
            bail!(Config, "batch size, group size and eval interval must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "weight decay must be >= 0 and momentum in [0, 1)");
        }
        if warmup_steps(self) + 1 >= self.total_steps {
            bail!(Config, "{} steps leave no decay phase after a warmup of {}", self.total_steps, warmup_steps(self));
        }
        Ok(())
    }
}

pub fn warmup_steps(cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * cfg.total_steps as f64).ceil() as usize
}

fn cosine_ramp(from: f64, to: f64, t: f64) -> f64 {
    from + (to - from) * 0.5 * (1.0 - (PI * t).cos())
}

/// One-cycle learning rate: cosine rise from `base_lr` to `peak_lr` over the
/// warmup steps, then cosine decay reaching `final_lr` at the last step.
pub fn one_cycle_lr(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= cfg.total_steps {
        bail!(Argument, "step {step} outside a {}-step schedule", cfg.total_steps);
    }
    let w = warmup_steps(cfg);
    if step <= w {
        return Ok(cosine_ramp(cfg.base_lr, cfg.peak_lr, step as f64 / w as f64));
    }
    let span = (cfg.total_steps - 1 - w) as f64;
    Ok(cosine_ramp(cfg.peak_lr, cfg.final_lr, (step - w) as f64 / span))
}

fn check_slots<T>(state: &mut Vec<Vec<T>>, params: &[&mut Param<T>], zero: T) -> Result<()>
where
    T: Copy,
{
    if state.is_empty() {
        *state = params.iter().map(|p| vec![zero; p.value.len()]).collect();
    }
    if state.len() != params.len() || state.iter().zip(params).any(|(s, p)| s.len() != p.value.len()) {
        bail!(State, "optimizer state does not match the parameter list");
    }
    Ok(())
}

/// SGD with heavy-ball momentum; the L2 decay term is added to the gradient
/// of decaying tensors (conv/linear weights) only.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        let mut params: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.kind.trainable()).collect();
        check_slots(&mut self.velocity, &params, T::zero())?;
        let (mu, lr) = (T::lit(self.momentum), T::lit(lr));
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = if p.kind.decays() { T::lit(self.weight_decay) } else { T::zero() };
            for ((w, &g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = mu * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay on decaying tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, betas: (0.9, 0.999), eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param<f32>>) {
        let mut params: Vec<&mut Param<f32>> = params.into_iter().filter(|p| p.kind.trainable()).collect();
        check_slots(&mut self.m, &params, 0.0).expect("AdamW used with a single parameter list");
        check_slots(&mut self.v, &params, 0.0).expect("AdamW used with a single parameter list");
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.kind.decays() { self.lr * self.weight_decay } else { 0.0 };
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                *mi = (b1 * *mi as f64 + (1.0 - b1) * g) as f32;
                *vi = (b2 * *vi as f64 + (1.0 - b2) * g * g) as f32;
                let update = self.lr * (*mi as f64 / c1) / ((*vi as f64 / c2).sqrt() + self.eps);
                *w = (*w as f64 * (1.0 - decay) - update) as f32;
            }
        }
    }
}

/// Step with the highest validation score; ties go to the earliest step.
pub fn select_checkpoint(history: &[(usize, f64)]) -> Option<usize> {
    history.iter().fold(None, |best: Option<(usize, f64)>, &(step, score)| match best {
        Some((_, b)) if score <= b => best,
        _ => Some((step, score)),
    })
    .map(|(s, _)| s)
}

/// Everything that defines a pretraining run.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSpec {
    pub network: NetworkConfig,
    pub ssl: SslConfig,
    pub augmentation: Augmentation,
    pub train: TrainConfig,
}

impl PretrainSpec {
    /// Network config with the predictor switched on for BYOL.
    pub fn resolved_network(&self) -> NetworkConfig {
        let mut net = self.network.clone();
        net.predictor_hidden = match self.ssl.framework {
            Framework::Byol => Some(self.ssl.predictor_hidden.unwrap_or(net.projection_hidden)),
            _ => None,
        };
        net
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ssl.validate()?;
        self.resolved_network().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Online network, optional momentum target, optimizer and sampling cursor.
pub struct Pretrainer {
    spec: PretrainSpec,
    pub online: SslNetwork<f32>,
    pub target: Option<SslNetwork<f32>>,
    queue: Option<KeyQueue<f32>>,
    opt: Sgd<f32>,
    step: usize,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Pretrainer {
    pub fn new(spec: PretrainSpec, n_samples: usize) -> Result<Self> {
        spec.validate()?;
        if n_samples < spec.train.batch_size {
            bail!(Config, "batch size {} exceeds the {n_samples} unlabeled samples", spec.train.batch_size);
        }
        let online = SslNetwork::new(spec.resolved_network(), spec.train.seed)?;
        let target = spec.ssl.framework.uses_target().then(|| online.clone());
        let queue = match spec.ssl.framework {
            Framework::Moco => {
                if spec.ssl.queue_capacity % spec.train.batch_size != 0 {
                    bail!(Config, "queue capacity {} is not a multiple of the batch size {}", spec.ssl.queue_capacity, spec.train.batch_size);
                }
                Some(KeyQueue::new(online.config().projection_dim, spec.ssl.queue_capacity)?)
            }
            _ => None,
        };
        let opt = Sgd::new(spec.train.momentum, spec.train.weight_decay);
        let mut me = Self { spec, online, target, queue, opt, step: 0, epoch: 0, order: Vec::new(), cursor: 0 };
        me.reshuffle(n_samples);
        Ok(me)
    }

    pub fn spec(&self) -> &PretrainSpec {
        &self.spec
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn reshuffle(&mut self, n: usize) {
        self.order = (0..n).collect();
        self.order.shuffle(&mut RngStream::derive(self.spec.train.seed, purpose::SHUFFLE, &[self.epoch as u64]));
        self.cursor = 0;
    }

    /// Next batch as `(epoch, sample)` pairs; epochs are permutations of the
    /// whole set and a batch may straddle two of them.
    fn next_batch(&mut self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.spec.train.batch_size);
        while out.len() < self.spec.train.batch_size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.reshuffle(n);
            }
            out.push((self.epoch, self.order[self.cursor]));
            self.cursor += 1;
        }
        out
    }

    fn views(&self, data: &Dataset, batch: &[(usize, usize)]) -> Result<(Vec<TimeSeries<f32>>, Vec<TimeSeries<f32>>)> {
        let (seed, g) = (self.spec.train.seed, self.spec.train.group_size);
        let per_sample = batch
            .par_iter()
            .map(|&(epoch, idx)| {
                let coords = [epoch as u64, idx as u64];
                let mut grng = RngStream::derive(seed, purpose::GROUP, &coords);
                let mut arng = RngStream::derive(seed, purpose::AUGMENT, &coords);
                let group = select_group(&data.samples()[idx], g, &mut grng)?;
                self.spec.augmentation.views(&group, &mut arng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut v1, mut v2) = (Vec::new(), Vec::new());
        for (a, b) in per_sample {
            v1.extend(a);
            v2.extend(b);
        }
        Ok((v1, v2))
    }

    /// One optimization step on the next batch of `data`.
    pub fn step(&mut self, data: &Dataset) -> Result<StepStats> {
        let cfg = self.spec.train.clone();
        let lr = one_cycle_lr(self.step, &cfg)?;
        let batch = self.next_batch(data.len());
        let (v1, v2) = self.views(data, &batch)?;
        let b = cfg.batch_size;
        let g = cfg.group_size;
        let tau = self.spec.ssl.temperature;
        self.online.zero_grad();

        let loss = match self.spec.ssl.framework {
            Framework::Simclr | Framework::Vicreg => {
                let both: Vec<&TimeSeries<f32>> = v1.iter().chain(&v2).collect();
                let out = self.online.forward(&series_to_tensor(&both)?, g, Mode::Train)?;
                let (z1, z2) = (out.z.slice_rows(0, b), out.z.slice_rows(b, 2 * b));
                let (loss, d1, d2) = if self.spec.ssl.framework == Framework::Simclr {
                    ssl::nt_xent(&z1, &z2, tau)?
                } else {
                    let (terms, d1, d2) = ssl::vicreg_loss(&z1, &z2, &self.spec.ssl.vicreg)?;
                    (terms.total, d1, d2)
                };
                check_finite(loss, self.step)?;
                self.online.backward(&Tensor::concat_rows(&[&d1, &d2])?, None)?;
                loss
            }
            Framework::Moco => {
                let x1: Vec<&TimeSeries<f32>> = v1.iter().collect();
                let x2: Vec<&TimeSeries<f32>> = v2.iter().collect();
                let q = self.online.forward(&series_to_tensor(&x1)?, g, Mode::Train)?.z;
                let target = self.target.as_mut().expect("MoCo keeps a target network");
                let k = target.forward_projection(&series_to_tensor(&x2)?, g, Mode::Train)?.z;
                let queue = self.queue.as_mut().expect("MoCo keeps a key queue");
                let (loss, dq) = ssl::moco_step(&q, &k, queue, tau)?;
                check_finite(loss, self.step)?;
                self.online.backward(&dq, None)?;
                loss
            }
            Framework::Byol => {
                let both: Vec<&TimeSeries<f32>> = v1.iter().chain(&v2).collect();
                let x = series_to_tensor(&both)?;
                let out = self.online.forward(&x, g, Mode::Train)?;
                let p = out.p.expect("BYOL network has a predictor");
                let target = self.target.as_mut().expect("BYOL keeps a target network");
                let t = target.forward_projection(&x, g, Mode::Train)?.z;
                let (loss, dp1, dp2) = ssl::byol_loss(&p.slice_rows(0, b), &t.slice_rows(b, 2 * b), &p.slice_rows(b, 2 * b), &t.slice_rows(0, b))?;
                check_finite(loss, self.step)?;
                let dz = Tensor::zeros(out.z.shape());
                self.online.backward(&dz, Some(&Tensor::concat_rows(&[&dp1, &dp2])?))?;
                loss
            }
        };

        let grad_norm = self.online.params().iter().filter(|p| p.kind.trainable()).flat_map(|p| p.grad.iter()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            bail!(Numerical, "diverged at step {}: non-finite gradient norm", self.step);
        }
        self.opt.step(self.online.params_mut(), lr)?;
        if let Some(target) = &mut self.target {
            ssl::momentum_update(&self.online, target, self.spec.ssl.momentum)?;
        }
        let stats = StepStats { step: self.step, loss: loss as f64, lr, grad_norm };
        self.step += 1;
        Ok(stats)
    }
}

fn check_finite(loss: f32, step: usize) -> Result<()> {
    if !loss.is_finite() {
        bail!(Numerical, "diverged at step {step}: loss is {loss}");
    }
    Ok(())
}

/// Held-out validation probe: the labeled validation split is divided into a
/// fitting half and a scoring half (stratified, fixed by the seed).
pub struct ValidationProbe<'a> {
    data: &'a Dataset,
    fit: Vec<usize>,
    score: Vec<usize>,
    labels: Vec<u32>,
    cfg: ProbeConfig,
}

impl<'a> ValidationProbe<'a> {
    pub fn new(data: &'a Dataset, seed: u64, cfg: ProbeConfig) -> Result<Self> {
        let labels = data.labels()?;
        let (mut fit, mut score) = (Vec::new(), Vec::new());
        for (c, mut members) in data.indices_by_class()?.into_iter().enumerate() {
            members.shuffle(&mut RngStream::derive(seed, purpose::SPLIT, &[c as u64]));
            let half = members.len().div_ceil(2);
            fit.extend_from_slice(&members[..half]);
            score.extend_from_slice(&members[half..]);
        }
        fit.sort_unstable();
        score.sort_unstable();
        if score.is_empty() {
            bail!(Argument, "validation split of {} samples is too small to score", data.len());
        }
        Ok(Self { data, fit, score, labels, cfg })
    }

    /// Probe accuracy and the spread of the representations.
    pub fn evaluate(&self, net: &SslNetwork<f32>) -> Result<(f64, Spread)> {
        let feats = extract_features(self.data, &net.encoder)?;
        let spread = Spread::measure(net, &feats)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.labels[i]).collect::<Vec<_>>();
        let probe = match LinearProbe::fit(&feats.select(&self.fit), &pick(&self.fit), self.data.n_classes(), &self.cfg) {
            Ok(p) => p,
            // constant features leave nothing to fit
            Err(Error::Argument(_)) if spread.h.collapsed => return Ok((0.0, spread)),
            Err(e) => return Err(e),
        };
        let ev = probe.evaluate(&feats.select(&self.score), &pick(&self.score))?;
        Ok((ev.metrics.oa, spread))
    }
}

/// Per-dimension spread of the encoder representations `H` and of their
/// projections `Z`. A collapse can hide in either: batch norm keeps `H`
/// spread out while a degenerate objective flattens the projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub h: CollapseReport,
    pub z: CollapseReport,
}

impl Spread {
    pub fn measure(net: &SslNetwork<f32>, feats: &Features) -> Result<Self> {
        let h = Tensor::from_vec(&[feats.rows(), feats.dim], feats.data.iter().map(|&v| v as f32).collect())?;
        let z = net.projector.clone().forward(&h, Mode::Eval)?;
        Ok(Self { h: collapse_report(&h), z: collapse_report(&z) })
    }

    pub fn collapsed(&self) -> bool {
        self.h.collapsed || self.z.collapsed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    /// Completed optimization steps.
    pub step: usize,
    pub score: Option<f64>,
    pub spread: Spread,
}

pub struct PretrainOutcome {
    pub losses: Vec<f64>,
    pub history: Vec<EvalRecord>,
    pub best_step: usize,
    pub best: Checkpoint,
    pub best_hash: String,
    pub final_network: SslNetwork<f32>,
    /// `H` or `Z` at the last evaluation fell below the spread threshold.
    pub collapsed: bool,
}

pub fn checkpoint_hash(ckpt: &Checkpoint) -> String {
    Sha256::digest(encode_checkpoint(ckpt)).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_file(step: usize) -> String {
    format!("step_{step:06}.ckpt")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the full schedule. With `run_dir`, writes `loss.csv`, a checkpoint
/// per evaluation, `history.csv`, `best.ckpt` and `best.json`. Without a
/// validation split, the last checkpoint is selected.
pub fn pretrain(spec: &PretrainSpec, unlabeled: &Dataset, val: Option<&Dataset>, probe: &ProbeConfig, run_dir: Option<&Path>) -> Result<PretrainOutcome> {
    let mut trainer = Pretrainer::new(spec.clone(), unlabeled.len())?;
    let vprobe = val.map(|v| ValidationProbe::new(v, spec.train.seed, *probe)).transpose()?;
    let mut loss_csv = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("loss.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "step,loss,lr").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let total = spec.train.total_steps;
    let mut losses = Vec::with_capacity(total);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for _ in 0..total {
        let s = trainer.step(unlabeled)?;
        losses.push(s.loss);
        if let Some((w, path)) = &mut loss_csv {
            writeln!(w, "{},{},{}", s.step, s.loss, s.lr).map_err(|e| Error::io(&*path, e))?;
        }
        let done = s.step + 1;
        if done % spec.train.eval_every != 0 && done != total {
            continue;
        }
        let (score, spread) = match &vprobe {
            Some(p) => {
                let (score, c) = p.evaluate(&trainer.online)?;
                (Some(score), c)
            }
            None => {
                let sample = unlabeled.subset(&(0..unlabeled.len().min(256)).collect::<Vec<_>>(), unlabeled.split())?;
                (None, Spread::measure(&trainer.online, &extract_features(&sample, &trainer.online.encoder)?)?)
            }
        };
        let ckpt = Checkpoint::from_network(&trainer.online);
        if let Some(dir) = run_dir {
            write_file(&dir.join(checkpoint_file(done)), &encode_checkpoint(&ckpt))?;
        }
        // no validation split: later checkpoints win
        let rank = score.unwrap_or(done as f64);
        if best.as_ref().map_or(true, |(_, b, _)| rank > *b) {
            best = Some((done, rank, ckpt));
        }
        history.push(EvalRecord { step: done, score, spread });
    }
    if let Some((mut w, path)) = loss_csv {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let (best_step, _, best_ckpt) = best.ok_or_else(|| Error::State("no evaluation ran".into()))?;
    debug_assert_eq!(
        select_checkpoint(&history.iter().map(|r| (r.step, r.score.unwrap_or(r.step as f64))).collect::<Vec<_>>()),
        Some(best_step)
    );
    let best_hash = checkpoint_hash(&best_ckpt);
    let collapsed = history.last().is_some_and(|r| r.spread.collapsed());
    if let Some(dir) = run_dir {
        write_file(&dir.join("best.ckpt"), &encode_checkpoint(&best_ckpt))?;
        let mut hist = String::from("step,score,h_mean_std,z_mean_std,collapsed\n");
        for r in &history {
            let score = r.score.map_or(String::new(), |s| s.to_string());
            hist.push_str(&format!("{},{},{},{},{}\n", r.step, score, r.spread.h.mean_std, r.spread.z.mean_std, r.spread.collapsed()));
        }
        write_file(&dir.join("history.csv"), hist.as_bytes())?;
        let record = serde_json::json!({
            "step": best_step,
            "file": checkpoint_file(best_step),
            "sha256": best_hash,
            "collapsed": collapsed,
        });
        write_file(&dir.join("best.json"), serde_json::to_string_pretty(&record).expect("json").as_bytes())?;
    }
    Ok(PretrainOutcome { losses, history, best_step, best: best_ckpt, best_hash, final_network: trainer.online, collapsed })
}

/// Path of the selected checkpoint inside a run directory.
pub fn best_checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join("best.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    #[test]
    fn schedule_anchors() {
        let cfg = TrainConfig::default();
        assert!((one_cycle_lr(0, &cfg).unwrap() - 2e-3).abs() < 1e-12);
        assert!((one_cycle_lr(400, &cfg).unwrap() - 5e-2).abs() < 1e-12);
        assert!((one_cycle_lr(1999, &cfg).unwrap() - 5e-5).abs() < 1e-12);
        assert!(one_cycle_lr(2000, &cfg).is_err());
    }

    #[test]
    fn short_schedules_rejected() {
        let cfg = TrainConfig { total_steps: 2, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { total_steps: 3, ..TrainConfig::default() }.validate().is_ok());
    }

    #[test]
    fn checkpoint_selection() {
        assert_eq!(select_checkpoint(&[(1000, 0.5), (2000, 0.7), (3000, 0.6)]), Some(2000));
        assert_eq!(select_checkpoint(&[(5, 0.1)]), Some(5));
        assert_eq!(select_checkpoint(&[(1000, 0.7), (2000, 0.7)]), Some(1000));
        assert_eq!(select_checkpoint(&[]), None);
    }

    #[test]
    fn decay_skips_bias_and_norm() {
        let mut params = vec![
            Param::new("w".into(), ParamKind::Weight, &[2], vec![1.0f64, -2.0]),
            Param::new("b".into(), ParamKind::Bias, &[1], vec![3.0]),
            Param::new("s".into(), ParamKind::Scale, &[1], vec![1.5]),
            Param::new("t".into(), ParamKind::Shift, &[1], vec![-0.5]),
        ];
        let mut opt = Sgd::new(0.9, 0.1);
        opt.step(params.iter_mut().collect(), 1.0).unwrap();
        assert_eq!(params[0].value, vec![0.9, -1.8]);
        assert_eq!(params[1].value, vec![3.0]);
        assert_eq!(params[2].value, vec![1.5]);
        assert_eq!(params[3].value, vec![-0.5]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = vec![Param::new("b".into(), ParamKind::Bias, &[1], vec![0.0f64])];
        p[0].grad = vec![1.0];
        let mut opt = Sgd::new(0.5, 0.0);
        opt.step(p.iter_mut().collect(), 0.1).unwrap();
        opt.step(p.iter_mut().collect(), 0.1).unwrap();
        assert!((p[0].value[0] - -(0.1 + 0.15)).abs() < 1e-15);
    }

    fn tiny(framework: Framework) -> (PretrainSpec, Dataset) {
        let synth = crate::synth::SynthConfig { n_classes: 3, len: 16, channels: 2, n_series: 2, unlabeled: 24, seed: 1, ..Default::default() };
        let data = crate::synth::generate_split(&synth, crate::data::SplitTag::Unlabeled).unwrap();
        let encoder = crate::nn::EncoderConfig { in_channels: 2, block_filters: vec![4, 4], kernel_sizes: vec![5, 3, 3] };
        let spec = PretrainSpec {
            network: NetworkConfig::with_encoder(encoder),
            ssl: SslConfig { framework, queue_capacity: 16, ..SslConfig::default() },
            augmentation: Augmentation::resampling(),
            train: TrainConfig { total_steps: 10, batch_size: 8, group_size: 2, eval_every: 5, seed: 1, ..TrainConfig::default() },
        };
        (spec, data)
    }

    #[test]
    fn every_framework_takes_finite_steps() {
        for fw in [Framework::Simclr, Framework::Moco, Framework::Byol, Framework::Vicreg] {
            let (spec, data) = tiny(fw);
            let mut t = Pretrainer::new(spec, data.len()).unwrap();
            for _ in 0..4 {
                let s = t.step(&data).unwrap();
                assert!(s.loss.is_finite() && s.grad_norm.is_finite(), "{fw:?}: {s:?}");
            }
        }
    }

    #[test]
    fn first_simclr_loss_is_bounded() {
        let (spec, data) = tiny(Framework::Simclr);
        let (b, tau) = (spec.train.batch_size as f64, spec.ssl.temperature);
        let mut t = Pretrainer::new(spec, data.len()).unwrap();
        let loss = t.step(&data).unwrap().loss;
        // cosines lie in [-1, 1]: each anchor's term is within [0, 2/tau + ln(2B - 1)]
        assert!(loss >= 0.0 && loss <= 2.0 / tau + (2.0 * b - 1.0).ln(), "{loss}");
    }

    #[test]
    fn target_follows_online_without_gradients() {
        for fw in [Framework::Moco, Framework::Byol] {
            let (spec, data) = tiny(fw);
            let m = spec.ssl.momentum as f32;
            let mut t = Pretrainer::new(spec, data.len()).unwrap();
            t.step(&data).unwrap();
            let before: Vec<Vec<f32>> = t.target.as_ref().unwrap().params().iter().map(|p| p.value.clone()).collect();
            t.step(&data).unwrap();
            let target = t.target.as_ref().unwrap();
            for ((tp, op), old) in target.params().iter().zip(t.online.params()).zip(&before) {
                assert!(tp.grad.iter().all(|&g| g == 0.0), "{fw:?}: gradient reached target {}", tp.name);
                if tp.kind.trainable() {
                    for ((&v, &o), &prev) in tp.value.iter().zip(&op.value).zip(old) {
                        assert!((v - (m * prev + (1.0 - m) * o)).abs() <= 1e-6 * (1.0 + v.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn steps_are_reproducible() {
        let run = || {
            let (spec, data) = tiny(Framework::Simclr);
            let mut t = Pretrainer::new(spec, data.len()).unwrap();
            (0..6).map(|_| t.step(&data).unwrap().loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
