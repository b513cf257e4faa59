//! Downstream evaluation: frozen-feature logistic-regression probe, two-stage
//! finetuning, per-series majority voting, the OA / kappa / macro-F1 metrics
//! and the label-efficiency sweep.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{purpose, Dataset, RngStream, TimeSeries};
use crate::error::{bail, Error, Result};
use crate::nn::{series_to_tensor, Encoder, Mlp, Mode, Module, Tensor};
use crate::train::AdamW;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            bail!(Argument, "{} counts for {n_classes} classes", counts.len());
        }
        Ok(Self { n_classes, counts })
    }

    pub fn from_predictions(truth: &[u32], pred: &[u32], n_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            bail!(Argument, "{} labels vs {} predictions", truth.len(), pred.len());
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(pred) {
            if t as usize >= n_classes || p as usize >= n_classes {
                bail!(Argument, "class index out of range for {n_classes} classes");
            }
            cm.counts[t as usize * n_classes + p as usize] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        metrics(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub kappa: f64,
    pub macro_f1: f64,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        bail!(Argument, "empty confusion matrix");
    }
    let k = cm.n_classes;
    let tf = total as f64;
    let row = |i: usize| (0..k).map(|j| cm.get(i, j)).sum::<u64>() as f64;
    let col = |j: usize| (0..k).map(|i| cm.get(i, j)).sum::<u64>() as f64;
    let trace: f64 = (0..k).map(|i| cm.get(i, i) as f64).sum();
    let oa = trace / tf;
    let pe: f64 = (0..k).map(|i| row(i) * col(i)).sum::<f64>() / (tf * tf);
    let kappa = if pe < 1.0 { (oa - pe) / (1.0 - pe) } else if oa == 1.0 { 1.0 } else { 0.0 };
    let macro_f1 = (0..k)
        .map(|i| {
            let tp = cm.get(i, i) as f64;
            let (r, c) = (row(i), col(i));
            if tp == 0.0 { 0.0 } else { 2.0 * tp / (r + c) }
        })
        .sum::<f64>()
        / k as f64;
    Ok(Metrics { oa, kappa, macro_f1 })
}

/// Sample predictions by plurality over each sample's `n_ts` consecutive
/// series predictions. Ties go to the class with the highest summed
/// probability (when given), then to the lowest class index.
pub fn majority_vote(preds: &[u32], n_ts: usize, probs: Option<&[f64]>, n_classes: usize) -> Vec<u32> {
    assert!(n_ts >= 1 && preds.len() % n_ts == 0, "predictions must come in groups of n_ts >= 1");
    if let Some(p) = probs {
        assert_eq!(p.len(), preds.len() * n_classes, "probabilities must be [series, classes]");
    }
    preds
        .chunks(n_ts)
        .enumerate()
        .map(|(s, votes)| {
            let mut count = vec![0usize; n_classes];
            for &v in votes {
                count[v as usize] += 1;
            }
            let mass = |c: usize| {
                probs.map_or(0.0, |p| (0..n_ts).map(|j| p[(s * n_ts + j) * n_classes + c]).sum::<f64>())
            };
            let mut best = 0;
            for c in 1..n_classes {
                if count[c] > count[best] || (count[c] == count[best] && mass(c) > mass(best)) {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

/// Per-series feature rows, sample-major: row `s * n_series + j` belongs to
/// series `j` of sample `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub n_samples: usize,
    pub n_series: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn rows(&self) -> usize {
        self.n_samples * self.n_series
    }

    pub fn row(&self, sample: usize, series: usize) -> &[f64] {
        let r = sample * self.n_series + series;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn select(&self, samples: &[usize]) -> Features {
        let block = self.n_series * self.dim;
        let data = samples.iter().flat_map(|&s| self.data[s * block..(s + 1) * block].iter().copied()).collect();
        Features { n_samples: samples.len(), n_series: self.n_series, dim: self.dim, data }
    }
}

const EMBED_CHUNK: usize = 256;

/// Frozen-encoder embeddings of every series (eval mode, no aggregation).
pub fn extract_features(ds: &Dataset, encoder: &Encoder<f32>) -> Result<Features> {
    let shape = ds.shape();
    if shape.channels != encoder.config().in_channels {
        bail!(
            Argument,
            "encoder expects {} channels but dataset {} has {}",
            encoder.config().in_channels,
            shape,
            shape.channels
        );
    }
    let series: Vec<&TimeSeries<f32>> = ds.samples().iter().flat_map(|s| s.series.iter()).collect();
    let parts = series
        .par_chunks(EMBED_CHUNK)
        .map(|part| encoder.clone().embed::<f32>(part, EMBED_CHUNK))
        .collect::<Result<Vec<Tensor<f32>>>>()?;
    let data = parts.iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect();
    Ok(Features { n_samples: shape.n, n_series: shape.n_series, dim: encoder.embedding_dim(), data })
}

/// Flattening is included only up to this many values per series.
pub const RAW_FLATTEN_LIMIT: usize = 1024;

/// Hand-crafted baseline features: per-channel mean, std, min and max,
/// followed by the flattened series when it is small enough.
pub fn raw_features(ds: &Dataset) -> Features {
    let shape = ds.shape();
    let flatten = shape.len * shape.channels <= RAW_FLATTEN_LIMIT;
    let dim = 4 * shape.channels + if flatten { shape.len * shape.channels } else { 0 };
    let mut data = Vec::with_capacity(shape.n * shape.n_series * dim);
    for s in ds.samples().iter().flat_map(|s| s.series.iter()) {
        for c in 0..s.channels() {
            let n = s.len() as f64;
            let mean = s.channel(c).map(f64::from).sum::<f64>() / n;
            let var = s.channel(c).map(|v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let min = s.channel(c).fold(f32::INFINITY, f32::min) as f64;
            let max = s.channel(c).fold(f32::NEG_INFINITY, f32::max) as f64;
            data.extend([mean, var.sqrt(), min, max]);
        }
        if flatten {
            data.extend(s.values().iter().map(|&v| v as f64));
        }
    }
    Features { n_samples: shape.n, n_series: shape.n_series, dim, data }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-5, max_iter: 2000 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            bail!(Config, "probe needs C > 0, tol > 0 and max_iter > 0");
        }
        Ok(())
    }
}

/// Multinomial logistic regression, weights `[classes, features]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    pub n_features: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn softmax_rows(logits: &mut [f64], k: usize) {
    for row in logits.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

fn affine(x: &[f64], m: usize, f: usize, w: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..m).flat_map(|_| b.iter().copied()).collect();
    <f64 as crate::Scalar>::gemm(m, f, k, 1.0, x, (f as isize, 1), w, (1, f as isize), 1.0, &mut out, (k as isize, 1));
    out
}

impl LogReg {
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len() / self.n_features;
        affine(x, m, self.n_features, &self.weights, &self.bias, self.n_classes)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.decision(x);
        softmax_rows(&mut p, self.n_classes);
        p
    }

    pub fn predict(&self, x: &[f64]) -> Vec<u32> {
        argmax_rows(&self.decision(x), self.n_classes)
    }
}

fn argmax_rows(x: &[f64], k: usize) -> Vec<u32> {
    x.chunks(k)
        .map(|r| r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best }) as u32)
        .collect()
}

struct Objective<'a> {
    x: &'a [f64],
    labels: &'a [u32],
    m: usize,
    f: usize,
    k: usize,
    reg: f64,
}

impl Objective<'_> {
    /// Mean cross-entropy plus `reg/2 * |W|^2` and its gradient; `theta` is
    /// `[W (k x f), b (k)]`.
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (w, b) = theta.split_at(self.k * self.f);
        let mut p = affine(self.x, self.m, self.f, w, b, self.k);
        let mut loss = 0.0;
        for (row, &y) in p.chunks_mut(self.k).zip(self.labels) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[y as usize];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            row[y as usize] -= 1.0;
        }
        let inv_m = 1.0 / self.m as f64;
        let (gw, gb) = grad.split_at_mut(self.k * self.f);
        gw.copy_from_slice(w);
        <f64 as crate::Scalar>::gemm(self.k, self.m, self.f, inv_m, &p, (1, self.k as isize), self.x, (self.f as isize, 1), self.reg, gw, (self.f as isize, 1));
        gb.fill(0.0);
        for row in p.chunks(self.k) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v * inv_m;
            }
        }
        loss * inv_m + 0.5 * self.reg * w.iter().map(|v| v * v).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const LBFGS_HISTORY: usize = 10;

/// Fits `mean CE + |W|^2 / (2 C M)` by L-BFGS with Armijo backtracking,
/// starting from zero. Stops once the gradient max-norm reaches `tol`, after
/// `max_iter` iterations, or when the line search can make no progress.
pub fn fit_logreg(features: &[f64], n_features: usize, labels: &[u32], n_classes: usize, cfg: &ProbeConfig) -> Result<LogReg> {
    cfg.validate()?;
    let m = labels.len();
    if n_features == 0 || features.len() != m * n_features {
        bail!(Argument, "{} feature values for {m} rows of width {n_features}", features.len());
    }
    if labels.iter().any(|&y| y as usize >= n_classes) {
        bail!(Argument, "label out of range for {n_classes} classes");
    }
    if labels.iter().all(|&y| y == labels.first().copied().unwrap_or(0)) {
        bail!(Argument, "logistic regression needs at least two classes in the training labels");
    }
    let obj = Objective { x: features, labels, m, f: n_features, k: n_classes, reg: 1.0 / (cfg.c * m as f64) };
    let dim = n_classes * n_features + n_classes;
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut loss = obj.eval(&theta, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        if grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        // two-loop recursion
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            history.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &d);
        }
        let mut step = if history.is_empty() { 1.0 / grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0) } else { 1.0 };
        let accepted = loop {
            for ((t, &x), &di) in trial.iter_mut().zip(&theta).zip(&d) {
                *t = x + step * di;
            }
            let f = obj.eval(&trial, &mut trial_grad);
            if f.is_finite() && f <= loss + 1e-4 * step * slope {
                break Some(f);
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some(f) = accepted else {
            // no descent along the quasi-Newton direction: retry once along -grad
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = d.iter().map(|v| v * step).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == LBFGS_HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        loss = f;
    }
    if !converged && grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) <= cfg.tol {
        converged = true;
    }
    let bias = theta.split_off(n_classes * n_features);
    Ok(LogReg { n_features, n_classes, weights: theta, bias, iterations, converged })
}

/// Per-feature standardization fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], dim: usize) -> Self {
        let m = (x.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in x.chunks(dim) {
            for (a, &v) in mean.iter_mut().zip(row) {
                *a += v / m;
            }
        }
        let mut var = vec![0.0; dim];
        for row in x.chunks(dim) {
            for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu) / m;
            }
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter().enumerate().map(|(i, &v)| (v - self.mean[i % d]) / self.scale[i % d]).collect()
    }
}

/// Standardized features followed by a logistic regression, trained on
/// individual series (each inheriting its sample's label).
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub standardizer: Standardizer,
    pub model: LogReg,
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<u32>,
}

fn repeat_labels(labels: &[u32], n_series: usize) -> Vec<u32> {
    labels.iter().flat_map(|&y| std::iter::repeat(y).take(n_series)).collect()
}

impl LinearProbe {
    pub fn fit(train: &Features, labels: &[u32], n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if labels.len() != train.n_samples {
            bail!(Argument, "{} labels for {} samples", labels.len(), train.n_samples);
        }
        let standardizer = Standardizer::fit(&train.data, train.dim);
        let x = standardizer.apply(&train.data);
        let model = fit_logreg(&x, train.dim, &repeat_labels(labels, train.n_series), n_classes, cfg)?;
        Ok(Self { standardizer, model })
    }

    /// Sample-level predictions by majority vote over series.
    pub fn predict(&self, feats: &Features) -> Result<Vec<u32>> {
        if feats.dim != self.model.n_features {
            bail!(Argument, "probe expects features of width {}, got {}", self.model.n_features, feats.dim);
        }
        let probs = self.model.predict_proba(&self.standardizer.apply(&feats.data));
        let preds = argmax_rows(&probs, self.model.n_classes);
        Ok(majority_vote(&preds, feats.n_series, Some(&probs), self.model.n_classes))
    }

    pub fn evaluate(&self, feats: &Features, labels: &[u32]) -> Result<Evaluation> {
        let predictions = self.predict(feats)?;
        let confusion = ConfusionMatrix::from_predictions(labels, &predictions, self.model.n_classes)?;
        Ok(Evaluation { metrics: confusion.metrics()?, confusion, predictions })
    }
}

/// Fits a probe on `train` and scores it on `test`.
pub fn probe_evaluate(train: &Features, train_labels: &[u32], test: &Features, test_labels: &[u32], n_classes: usize, cfg: &ProbeConfig) -> Result<Evaluation> {
    LinearProbe::fit(train, train_labels, n_classes, cfg)?.evaluate(test, test_labels)
}

/// `k` random sample indices per class, drawn without replacement.
pub fn subsample_per_class(labels: &[u32], n_classes: usize, k: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let mut out = Vec::with_capacity(k * n_classes);
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < k {
            bail!(Argument, "class {c} has {} labeled samples, fewer than the {k} requested", members.len());
        }
        out.extend(members.choose_multiple(rng, k).copied());
    }
    out.sort_unstable();
    Ok(out)
}

// ---------------------------------------------------------------- finetuning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub head_hidden: usize,
    pub dropout: f64,
    pub head_lr: f64,
    pub encoder_lr: f64,
    pub weight_decay: f64,
    pub frozen_epochs: usize,
    pub full_epochs: usize,
    pub batch_size: usize,
    /// Set from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            head_hidden: 256,
            dropout: 0.2,
            head_lr: 1e-3,
            encoder_lr: 2e-5,
            weight_decay: 5e-4,
            frozen_epochs: 10,
            full_epochs: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Frozen,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneLog {
    pub frozen_epochs: usize,
    pub full_epochs: usize,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the selected model.
    pub best: usize,
}

/// Encoder plus MLP head, predicting each series independently.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub encoder: Encoder<f32>,
    pub head: Mlp<f32>,
}

impl Classifier {
    fn series_probs(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let feats = extract_features(ds, &self.encoder)?;
        let x: Vec<f32> = feats.data.iter().map(|&v| v as f32).collect();
        let mut head = self.head.clone();
        let logits = head.forward(&Tensor::from_vec(&[feats.rows(), feats.dim], x)?, Mode::Eval)?;
        let mut p: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        softmax_rows(&mut p, self.head.outputs());
        Ok(p)
    }

    pub fn predict(&self, ds: &Dataset) -> Result<Vec<u32>> {
        let k = self.head.outputs();
        let probs = self.series_probs(ds)?;
        let preds = argmax_rows(&probs, k);
        Ok(majority_vote(&preds, ds.shape().n_series, Some(&probs), k))
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Evaluation> {
        let predictions = self.predict(ds)?;
        let confusion = ConfusionMatrix::from_predictions(&ds.labels()?, &predictions, self.head.outputs())?;
        Ok(Evaluation { metrics: confusion.metrics()?, confusion, predictions })
    }
}

/// Mean softmax cross-entropy over rows and its gradient at the logits.
fn cross_entropy(logits: &Tensor<f32>, labels: &[u32]) -> (f64, Tensor<f32>) {
    let k = logits.dim(1);
    let n = labels.len() as f64;
    let mut p: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
    softmax_rows(&mut p, k);
    let mut loss = 0.0;
    for (row, &y) in p.chunks_mut(k).zip(labels) {
        loss -= row[y as usize].max(1e-300).ln();
        row[y as usize] -= 1.0;
    }
    let grad = p.iter().map(|&v| (v / n) as f32).collect();
    (loss / n, Tensor::from_vec(logits.shape(), grad).expect("same shape"))
}

fn series_and_labels(ds: &Dataset) -> Result<(Vec<&TimeSeries<f32>>, Vec<u32>)> {
    let labels = ds.labels()?;
    let n_ts = ds.shape().n_series;
    let series = ds.samples().iter().flat_map(|s| s.series.iter()).collect();
    Ok((series, repeat_labels(&labels, n_ts)))
}

/// Trains a dropout MLP head on top of `encoder`: first alone with the encoder
/// frozen, then jointly with separate learning rates. The model with the best
/// validation accuracy (earliest on ties) is returned.
pub fn finetune(train: &Dataset, val: &Dataset, encoder: Encoder<f32>, cfg: &FinetuneConfig) -> Result<(Classifier, FinetuneLog)> {
    if cfg.batch_size == 0 || cfg.frozen_epochs + cfg.full_epochs == 0 {
        bail!(Config, "finetuning needs a positive batch size and at least one epoch");
    }
    let k = train.n_classes();
    let mut init = RngStream::derive(cfg.seed, purpose::INIT, &[1]);
    let head = Mlp::with_dropout("classifier", encoder.embedding_dim(), cfg.head_hidden, k, cfg.dropout, &mut init, RngStream::derive(cfg.seed, purpose::DROPOUT, &[1]))?;
    let mut model = Classifier { encoder, head };
    let (series, labels) = series_and_labels(train)?;
    val.labels()?;

    let mut head_opt = AdamW::new(cfg.head_lr, cfg.weight_decay);
    let mut enc_opt = AdamW::new(cfg.encoder_lr, cfg.weight_decay);
    let mut epochs = Vec::with_capacity(cfg.frozen_epochs + cfg.full_epochs);
    let mut best: Option<(f64, Classifier)> = None;
    let mut best_idx = 0;

    // frozen phase works on fixed eval-mode features
    let frozen_feats = if cfg.frozen_epochs > 0 {
        let f = extract_features(train, &model.encoder)?;
        Some(f.data.iter().map(|&v| v as f32).collect::<Vec<f32>>())
    } else {
        None
    };
    let dim = model.encoder.embedding_dim();

    for (phase, n_epochs) in [(Phase::Frozen, cfg.frozen_epochs), (Phase::Full, cfg.full_epochs)] {
        for epoch in 0..n_epochs {
            let global = epochs.len() as u64;
            let mut order: Vec<usize> = (0..series.len()).collect();
            order.shuffle(&mut RngStream::derive(cfg.seed, purpose::SHUFFLE, &[1, global]));
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let y: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
                model.head.zero_grad();
                let loss = match phase {
                    Phase::Frozen => {
                        let f = frozen_feats.as_ref().expect("features extracted for the frozen phase");
                        let x: Vec<f32> = batch.iter().flat_map(|&i| f[i * dim..(i + 1) * dim].iter().copied()).collect();
                        let logits = model.head.forward(&Tensor::from_vec(&[batch.len(), dim], x)?, Mode::Train)?;
                        let (loss, g) = cross_entropy(&logits, &y);
                        model.head.backward(&g)?;
                        loss
                    }
                    Phase::Full => {
                        model.encoder.zero_grad();
                        let parts: Vec<&TimeSeries<f32>> = batch.iter().map(|&i| series[i]).collect();
                        let h = model.encoder.forward(&series_to_tensor(&parts)?, Mode::Train)?;
                        let logits = model.head.forward(&h, Mode::Train)?;
                        let (loss, g) = cross_entropy(&logits, &y);
                        let dh = model.head.backward(&g)?;
                        model.encoder.backward(&dh)?;
                        enc_opt.step(model.encoder.params_mut());
                        loss
                    }
                };
                if !loss.is_finite() {
                    bail!(Numerical, "finetuning diverged: non-finite loss in {phase:?} epoch {epoch}");
                }
                head_opt.step(model.head.params_mut());
                total += loss * batch.len() as f64;
            }
            let val_accuracy = model.evaluate(val)?.metrics.oa;
            epochs.push(EpochRecord { phase, epoch, loss: total / series.len() as f64, val_accuracy });
            if best.as_ref().map_or(true, |(b, _)| val_accuracy > *b) {
                best_idx = epochs.len() - 1;
                best = Some((val_accuracy, model.clone()));
            }
        }
    }
    let (_, chosen) = best.ok_or_else(|| Error::State("no finetuning epoch ran".into()))?;
    Ok((chosen, FinetuneLog { frozen_epochs: cfg.frozen_epochs, full_epochs: cfg.full_epochs, epochs, best: best_idx }))
}

// ------------------------------------------------------------------- sweeps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub samples_per_class: Vec<usize>,
    pub repeats: usize,
    /// Set from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { samples_per_class: vec![5, 10, 20, 50, 100], repeats: 20, seed: 0, probe: ProbeConfig::default() }
    }
}

/// Feature set for one sweep row: the labeled pool and the test split.
pub struct SweepMethod {
    pub name: String,
    pub pool: Features,
    pub test: Features,
}

/// One (method, k, repeat) cell; metrics in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub method: String,
    pub k: usize,
    pub repeat: usize,
    pub oa: f64,
    pub kappa: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub method: String,
    pub k: usize,
    pub runs: usize,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub kappa_mean: f64,
    pub kappa_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// Standard deviation of OA above one point.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Linear-probe accuracy as a function of labeled samples per class. The
/// labeled subset of cell `(k, repeat)` depends only on the seed and the cell,
/// so every method sees the same training samples.
pub fn label_efficiency_sweep(methods: &[SweepMethod], pool_labels: &[u32], test_labels: &[u32], n_classes: usize, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.probe.validate()?;
    if cfg.repeats == 0 || cfg.samples_per_class.is_empty() {
        bail!(Config, "sweep needs at least one k and one repeat");
    }
    let mut subsets = Vec::new();
    for &k in &cfg.samples_per_class {
        for r in 0..cfg.repeats {
            let mut rng = RngStream::derive(cfg.seed, purpose::SUBSET, &[k as u64, r as u64]);
            subsets.push((k, r, subsample_per_class(pool_labels, n_classes, k, &mut rng)?));
        }
    }
    let jobs: Vec<(&SweepMethod, &(usize, usize, Vec<usize>))> = methods.iter().flat_map(|m| subsets.iter().map(move |s| (m, s))).collect();
    let cells = jobs
        .par_iter()
        .map(|(m, (k, r, idx))| {
            let labels: Vec<u32> = idx.iter().map(|&i| pool_labels[i]).collect();
            let ev = probe_evaluate(&m.pool.select(idx), &labels, &m.test, test_labels, n_classes, &cfg.probe)?;
            Ok(SweepCell { method: m.name.clone(), k: *k, repeat: *r, oa: 100.0 * ev.metrics.oa, kappa: 100.0 * ev.metrics.kappa, macro_f1: 100.0 * ev.metrics.macro_f1 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for m in methods {
        for &k in &cfg.samples_per_class {
            let sel: Vec<&SweepCell> = cells.iter().filter(|c| c.method == m.name && c.k == k).collect();
            let (oa_mean, oa_std) = mean_std(&sel.iter().map(|c| c.oa).collect::<Vec<_>>());
            let (kappa_mean, kappa_std) = mean_std(&sel.iter().map(|c| c.kappa).collect::<Vec<_>>());
            let (f1_mean, f1_std) = mean_std(&sel.iter().map(|c| c.macro_f1).collect::<Vec<_>>());
            summary.push(SweepSummary { method: m.name.clone(), k, runs: sel.len(), oa_mean, oa_std, kappa_mean, kappa_std, f1_mean, f1_std, flagged: oa_std > 1.0 });
        }
    }
    Ok(SweepResult { cells, summary })
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("method,k,repeat,oa,kappa,macro_f1\n");
    for c in &result.cells {
        out.push_str(&format!("{},{},{},{:.4},{:.4},{:.4}\n", c.method, c.k, c.repeat, c.oa, c.kappa, c.macro_f1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn metric_hand_cases() {
        let m = metrics(&ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 7]).unwrap()).unwrap();
        assert_eq!((m.oa, m.kappa, m.macro_f1), (1.0, 1.0, 1.0));
        let m = metrics(&ConfusionMatrix::from_counts(2, vec![1, 1, 1, 1]).unwrap()).unwrap();
        assert_eq!(m.oa, 0.5);
        assert_eq!(m.kappa, 0.0);
        assert!(metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn unsupported_class_scores_zero_f1() {
        let m = metrics(&ConfusionMatrix::from_counts(2, vec![3, 0, 0, 0]).unwrap()).unwrap();
        assert_eq!(m.macro_f1, 0.5);
    }

    #[test]
    fn vote_rules() {
        assert_eq!(majority_vote(&[2, 0, 1], 1, None, 3), vec![2, 0, 1]);
        assert_eq!(majority_vote(&[0, 0, 1], 3, None, 2), vec![0]);
        let probs = [0.6, 0.4, 0.1, 0.9];
        assert_eq!(majority_vote(&[0, 1], 2, Some(&probs), 2), vec![1]);
        assert_eq!(majority_vote(&[1, 0], 2, None, 2), vec![0]);
    }

    #[test]
    fn vote_is_permutation_invariant() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            let preds: Vec<u32> = (0..5).map(|_| rng.gen_range(0..3)).collect();
            let probs: Vec<f64> = (0..15).map(|_| rng.gen()).collect();
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let p2: Vec<u32> = perm.iter().map(|&i| preds[i]).collect();
            let q2: Vec<f64> = perm.iter().flat_map(|&i| probs[i * 3..i * 3 + 3].to_vec()).collect();
            assert_eq!(majority_vote(&preds, 5, Some(&probs), 3), majority_vote(&p2, 5, Some(&q2), 3));
        }
    }

    fn toy() -> (Vec<f64>, Vec<u32>) {
        let x = vec![0.0, 0.0, 1.0, 0.2, 0.2, 1.0, 3.0, 3.0, 4.0, 2.5, 2.8, 3.9];
        (x, vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn separable_toy_set() {
        let (x, y) = toy();
        let m = fit_logreg(&x, 2, &y, 2, &ProbeConfig::default()).unwrap();
        assert!(m.converged);
        assert_eq!(m.predict(&x), y);
    }

    #[test]
    fn single_class_rejected() {
        assert!(fit_logreg(&[1.0, 2.0], 1, &[1, 1], 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn duplicated_feature_gets_symmetric_weights() {
        let mut rng = RngStream::new(3, 0);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for i in 0..60 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            x.extend([a, b, a]);
            y.push(((a + 0.3 * b > 0.0) as u32 + (i % 7 == 0) as u32) % 2);
        }
        let m = fit_logreg(&x, 3, &y, 2, &ProbeConfig::default()).unwrap();
        for k in 0..2 {
            assert!((m.weights[k * 3] - m.weights[k * 3 + 2]).abs() < 1e-6);
        }
    }

    #[test]
    fn subsample_checks_support() {
        let labels = [0, 1, 0, 1, 1];
        let mut rng = RngStream::new(0, 0);
        let idx = subsample_per_class(&labels, 2, 2, &mut rng).unwrap();
        assert_eq!(idx.len(), 4);
        assert!(subsample_per_class(&labels, 2, 3, &mut rng).is_err());
    }
}
