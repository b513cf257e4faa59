//! Contrastive and non-contrastive objectives (SimCLR, MoCo, BYOL, VICReg),
//! each returning the loss together with its gradient at the embeddings, plus
//! the MoCo key queue, the momentum target update and a collapse detector.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Module, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Simclr,
    Moco,
    Byol,
    Vicreg,
}

impl Framework {
    pub fn uses_target(self) -> bool {
        matches!(self, Framework::Moco | Framework::Byol)
    }

    pub fn name(self) -> &'static str {
        match self {
            Framework::Simclr => "simclr",
            Framework::Moco => "moco",
            Framework::Byol => "byol",
            Framework::Vicreg => "vicreg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VicRegWeights {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl Default for VicRegWeights {
    fn default() -> Self {
        Self { lambda: 25.0, mu: 25.0, nu: 1.0, gamma: 1.0, eps: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub framework: Framework,
    /// Softmax temperature (SimCLR, MoCo).
    pub temperature: f64,
    /// Target-network momentum (MoCo, BYOL).
    pub momentum: f64,
    pub queue_capacity: usize,
    pub vicreg: VicRegWeights,
    /// Hidden width of the BYOL predictor; `None` uses the projection hidden width.
    pub predictor_hidden: Option<usize>,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            framework: Framework::Simclr,
            temperature: 0.1,
            momentum: 0.996,
            queue_capacity: 8192,
            vicreg: VicRegWeights::default(),
            predictor_hidden: None,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            bail!(Config, "temperature must be positive");
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            bail!(Config, "momentum must be in (0, 1), got {}", self.momentum);
        }
        let v = &self.vicreg;
        if [v.lambda, v.mu, v.nu, v.gamma].iter().any(|&w| !(w >= 0.0)) || !(v.eps > 0.0) {
            bail!(Config, "VICReg weights must be non-negative and eps positive");
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, min_rows: usize, what: &str) -> Result<(usize, usize)> {
    if a.shape().len() != 2 || a.shape() != b.shape() {
        bail!(Argument, "{what}: mismatched embeddings {:?} vs {:?}", a.shape(), b.shape());
    }
    let (n, d) = (a.dim(0), a.dim(1));
    if n < min_rows {
        bail!(Argument, "{what} needs a batch of at least {min_rows}, got {n}");
    }
    if d == 0 {
        bail!(Argument, "{what}: zero-width embeddings");
    }
    Ok((n, d))
}

/// Row-wise L2 normalization; returns normalized rows and the row norms.
fn normalize_rows<T: Scalar>(x: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let tiny = T::lit(1e-12);
    let mut out = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.len() / d);
    for row in x.chunks(d) {
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(tiny);
        norms.push(n);
        out.extend(row.iter().map(|&v| v / n));
    }
    (out, norms)
}

/// Maps a gradient at normalized rows back through the normalization.
fn normalize_backward<T: Scalar>(unit: &[T], norms: &[T], du: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(du.len());
    for ((u, g), &n) in unit.chunks(d).zip(du.chunks(d)).zip(norms) {
        let dot = u.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>();
        out.extend(u.iter().zip(g).map(|(&a, &b)| (b - a * dot) / n));
    }
    out
}

/// `[n, d] x [m, d]^T`.
fn gram<T: Scalar>(a: &[T], n: usize, b: &[T], m: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    T::gemm(n, d, m, T::one(), a, (d as isize, 1), b, (1, d as isize), T::zero(), &mut out, (m as isize, 1));
    out
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

/// Normalized-temperature cross-entropy over the `2B` anchors of two views.
/// Each anchor's positive is its counterpart in the other view; every other
/// embedding (except the anchor) is a negative. Returns `(loss, dz1, dz2)`.
pub fn nt_xent<T: Scalar>(z1: &Tensor<T>, z2: &Tensor<T>, tau: f64) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let (b, d) = check_pair(z1, z2, 2, "NT-Xent")?;
    if !(tau > 0.0) {
        bail!(Argument, "temperature must be positive");
    }
    let n = 2 * b;
    let z: Vec<T> = z1.data().iter().chain(z2.data()).copied().collect();
    let (u, norms) = normalize_rows(&z, d);
    let inv_tau = T::lit(1.0 / tau);
    let sim: Vec<T> = gram(&u, n, &u, n, d).into_iter().map(|s| s * inv_tau).collect();
    let scale = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    // grad wrt logits, zero on the diagonal
    let mut g = vec![T::zero(); n * n];
    for i in 0..n {
        let pos = (i + b) % n;
        let row = &sim[i * n..(i + 1) * n];
        let others = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &s)| s);
        let lse = log_sum_exp(others);
        loss += lse - row[pos];
        for j in (0..n).filter(|&j| j != i) {
            g[i * n + j] = (row[j] - lse).exp() * scale;
        }
        g[i * n + pos] -= scale;
    }
    loss *= scale;
    // d sim_ij / d u_k: sim is symmetric in (i, j)
    let mut gs = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            gs[i * n + j] = (g[i * n + j] + g[j * n + i]) * inv_tau;
        }
    }
    let mut du = vec![T::zero(); n * d];
    T::gemm(n, n, d, T::one(), &gs, (n as isize, 1), &u, (d as isize, 1), T::zero(), &mut du, (d as isize, 1));
    let dz = normalize_backward(&u, &norms, &du, d);
    Ok((loss, Tensor::from_vec(&[b, d], dz[..b * d].to_vec())?, Tensor::from_vec(&[b, d], dz[b * d..].to_vec())?))
}

/// Per-branch VICReg regularizers and their gradient.
fn vicreg_branch<T: Scalar>(z: &[T], b: usize, d: usize, w: &VicRegWeights) -> (T, T, Vec<T>) {
    let bf = T::lit(b as f64);
    let df = T::lit(d as f64);
    let denom = T::lit((b - 1) as f64);
    let mut mean = vec![T::zero(); d];
    for row in z.chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= bf;
    }
    let zc: Vec<T> = z.chunks(d).flat_map(|row| row.iter().zip(&mean).map(|(&v, &m)| v - m).collect::<Vec<_>>()).collect();
    let mut cov = vec![T::zero(); d * d];
    T::gemm(d, b, d, T::one() / denom, &zc, (1, d as isize), &zc, (d as isize, 1), T::zero(), &mut cov, (d as isize, 1));

    let gamma = T::lit(w.gamma);
    let eps = T::lit(w.eps);
    let mut var_term = T::zero();
    // d var_term / d zc[., j] = coef[j] * zc[., j]
    let mut var_coef = vec![T::zero(); d];
    for j in 0..d {
        let std = (cov[j * d + j] + eps).sqrt();
        if gamma > std {
            var_term += gamma - std;
            var_coef[j] = -T::one() / (df * denom * std);
        }
    }
    var_term /= df;

    let mut cov_term = T::zero();
    let mut gcov = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let c = cov[i * d + j];
                cov_term += c * c;
                gcov[i * d + j] = T::lit(2.0) * c / df;
            }
        }
    }
    cov_term /= df;

    let (mu, nu) = (T::lit(w.mu), T::lit(w.nu));
    // d cov_term / d zc = 2 zc G / (b - 1) for symmetric G
    let mut dzc = vec![T::zero(); b * d];
    T::gemm(b, d, d, nu * T::lit(2.0) / denom, &zc, (d as isize, 1), &gcov, (d as isize, 1), T::zero(), &mut dzc, (d as isize, 1));
    for (r, row) in dzc.chunks_mut(d).enumerate() {
        for j in 0..d {
            row[j] += mu * var_coef[j] * zc[r * d + j];
        }
    }
    // centering: subtract the column mean of the gradient
    let mut gmean = vec![T::zero(); d];
    for row in dzc.chunks(d) {
        for (m, &v) in gmean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for row in dzc.chunks_mut(d) {
        for (v, &m) in row.iter_mut().zip(&gmean) {
            *v -= m / bf;
        }
    }
    (var_term, cov_term, dzc)
}

/// Components of a VICReg evaluation (already weighted sum in `total`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VicRegTerms<T> {
    pub invariance: T,
    pub variance: T,
    pub covariance: T,
    pub total: T,
}

/// `lambda * mse(z1, z2) + mu * (v(z1) + v(z2)) + nu * (c(z1) + c(z2))` with
/// `v` the mean hinge `max(0, gamma - sqrt(var + eps))` over dimensions and
/// `c` the summed squared off-diagonal covariance divided by the width.
pub fn vicreg_loss<T: Scalar>(z1: &Tensor<T>, z2: &Tensor<T>, w: &VicRegWeights) -> Result<(VicRegTerms<T>, Tensor<T>, Tensor<T>)> {
    let (b, d) = check_pair(z1, z2, 2, "VICReg")?;
    let n = T::lit((b * d) as f64);
    let lambda = T::lit(w.lambda);
    let mut invariance = T::zero();
    let mut d1 = Vec::with_capacity(b * d);
    let mut d2 = Vec::with_capacity(b * d);
    for (&a, &c) in z1.data().iter().zip(z2.data()) {
        let diff = a - c;
        invariance += diff * diff;
        let g = lambda * T::lit(2.0) * diff / n;
        d1.push(g);
        d2.push(-g);
    }
    invariance /= n;
    let (v1, c1, g1) = vicreg_branch(z1.data(), b, d, w);
    let (v2, c2, g2) = vicreg_branch(z2.data(), b, d, w);
    for (a, g) in d1.iter_mut().zip(g1) {
        *a += g;
    }
    for (a, g) in d2.iter_mut().zip(g2) {
        *a += g;
    }
    let variance = v1 + v2;
    let covariance = c1 + c2;
    let total = lambda * invariance + T::lit(w.mu) * variance + T::lit(w.nu) * covariance;
    Ok((VicRegTerms { invariance, variance, covariance, total }, Tensor::from_vec(&[b, d], d1)?, Tensor::from_vec(&[b, d], d2)?))
}

/// `2 - 2 * mean_b cos(p_b, t_b)` and its gradient with respect to `p`.
/// `t` is treated as a constant.
pub fn byol_term<T: Scalar>(p: &Tensor<T>, t: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (b, d) = check_pair(p, t, 1, "BYOL")?;
    let (pu, pn) = normalize_rows(p.data(), d);
    let (tu, _) = normalize_rows(t.data(), d);
    let bf = T::lit(b as f64);
    let mut mean_cos = T::zero();
    let mut du = Vec::with_capacity(b * d);
    for (p, t) in pu.chunks(d).zip(tu.chunks(d)) {
        mean_cos += p.iter().zip(t).map(|(&a, &b)| a * b).sum::<T>();
        du.extend(t.iter().map(|&v| -T::lit(2.0) * v / bf));
    }
    mean_cos /= bf;
    let dp = normalize_backward(&pu, &pn, &du, d);
    Ok((T::lit(2.0) - T::lit(2.0) * mean_cos, Tensor::from_vec(&[b, d], dp)?))
}

/// Symmetrized BYOL objective: mean of `term(p1, t2)` and `term(p2, t1)`.
/// Returns `(loss, dp1, dp2)`; targets receive no gradient.
pub fn byol_loss<T: Scalar>(p1: &Tensor<T>, t2: &Tensor<T>, p2: &Tensor<T>, t1: &Tensor<T>) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let (l1, g1) = byol_term(p1, t2)?;
    let (l2, g2) = byol_term(p2, t1)?;
    let half = T::lit(0.5);
    Ok((half * (l1 + l2), g1.map(|v| v * half), g2.map(|v| v * half)))
}

/// Fixed-capacity ring buffer of unit-norm keys.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue<T> {
    dim: usize,
    capacity: usize,
    keys: Vec<T>,
    len: usize,
    head: usize,
}

impl<T: Scalar> KeyQueue<T> {
    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if dim == 0 || capacity == 0 {
            bail!(Argument, "queue needs positive dimension and capacity");
        }
        Ok(Self { dim, capacity, keys: vec![T::zero(); dim * capacity], len: 0, head: 0 })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored keys, oldest first.
    pub fn keys_in_order(&self) -> Vec<&[T]> {
        let start = (self.head + self.capacity - self.len) % self.capacity;
        (0..self.len).map(|i| {
            let slot = (start + i) % self.capacity;
            &self.keys[slot * self.dim..(slot + 1) * self.dim]
        }).collect()
    }

    /// Appends normalized rows of `keys`, overwriting the oldest entries.
    pub fn enqueue(&mut self, keys: &Tensor<T>) -> Result<()> {
        if keys.shape().len() != 2 || keys.dim(1) != self.dim {
            bail!(Argument, "queue expects keys of width {}, got {:?}", self.dim, keys.shape());
        }
        let (unit, _) = normalize_rows(keys.data(), self.dim);
        for row in unit.chunks(self.dim) {
            self.keys[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(row);
            self.head = (self.head + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(())
    }

    fn contiguous(&self) -> Vec<T> {
        self.keys_in_order().concat()
    }
}

/// InfoNCE for queries against their keys: the positive of query `i` is key
/// `i`; negatives are the other in-batch keys and every queued key.
/// Returns `(loss, dquery)`; keys receive no gradient.
pub fn moco_loss<T: Scalar>(query: &Tensor<T>, key: &Tensor<T>, queue: &KeyQueue<T>, tau: f64) -> Result<(T, Tensor<T>)> {
    let (b, d) = check_pair(query, key, 1, "MoCo")?;
    if d != queue.dim() {
        bail!(Argument, "queue width {} does not match embeddings {d}", queue.dim());
    }
    if !(tau > 0.0) {
        bail!(Argument, "temperature must be positive");
    }
    let (qu, qn) = normalize_rows(query.data(), d);
    let (ku, _) = normalize_rows(key.data(), d);
    let mut bank = ku.clone();
    bank.extend(queue.contiguous());
    let m = bank.len() / d;
    let inv_tau = T::lit(1.0 / tau);
    let logits: Vec<T> = gram(&qu, b, &bank, m, d).into_iter().map(|s| s * inv_tau).collect();
    let scale = T::one() / T::lit(b as f64);
    let mut loss = T::zero();
    let mut g = vec![T::zero(); b * m];
    for i in 0..b {
        let row = &logits[i * m..(i + 1) * m];
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[i];
        for j in 0..m {
            g[i * m + j] = (row[j] - lse).exp() * scale * inv_tau;
        }
        g[i * m + i] -= scale * inv_tau;
    }
    let mut du = vec![T::zero(); b * d];
    T::gemm(b, m, d, T::one(), &g, (m as isize, 1), &bank, (d as isize, 1), T::zero(), &mut du, (d as isize, 1));
    let dq = normalize_backward(&qu, &qn, &du, d);
    Ok((loss * scale, Tensor::from_vec(&[b, d], dq)?))
}

/// One MoCo update: loss against the current queue, then the keys are enqueued.
pub fn moco_step<T: Scalar>(query: &Tensor<T>, key: &Tensor<T>, queue: &mut KeyQueue<T>, tau: f64) -> Result<(T, Tensor<T>)> {
    let b = query.shape().first().copied().unwrap_or(0);
    if b == 0 || queue.capacity() % b != 0 {
        bail!(Argument, "queue capacity {} is not a multiple of the batch size {b}", queue.capacity());
    }
    let out = moco_loss(query, key, queue, tau)?;
    queue.enqueue(key)?;
    Ok(out)
}

/// `target <- m * target + (1 - m) * online` over trainable tensors.
pub fn momentum_update<T: Scalar, M: Module<T>>(online: &M, target: &mut M, m: f64) -> Result<()> {
    let src: Vec<_> = online.params().into_iter().filter(|p| p.kind.trainable()).collect();
    let mut dst: Vec<_> = target.params_mut().into_iter().filter(|p| p.kind.trainable()).collect();
    if src.len() != dst.len() {
        bail!(State, "online and target networks have {} vs {} tensors", src.len(), dst.len());
    }
    let (keep, take) = (T::lit(m), T::lit(1.0 - m));
    for (s, t) in src.iter().zip(dst.iter_mut()) {
        if s.shape != t.shape {
            bail!(State, "tensor {} has shape {:?} online but {:?} in target", s.name, s.shape, t.shape);
        }
        if m == 1.0 {
            continue;
        }
        for (tv, &sv) in t.value.iter_mut().zip(&s.value) {
            *tv = if m == 0.0 { sv } else { keep * *tv + take * sv };
        }
    }
    Ok(())
}

/// Standard deviation of each column of `[n, d]` representations.
pub fn per_dim_std<T: Scalar>(h: &Tensor<T>) -> Vec<f64> {
    let (n, d) = (h.dim(0), h.dim(1));
    (0..d)
        .map(|j| {
            let col = h.data().iter().skip(j).step_by(d).map(|v| v.as_f64());
            let mean = col.clone().sum::<f64>() / n as f64;
            (col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
        })
        .collect()
}

/// Threshold on the mean per-dimension std below which representations are
/// reported as collapsed.
pub const COLLAPSE_STD: f64 = 1e-3;

/// Per-dimension spread of a validation batch of representations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub mean_std: f64,
    pub max_std: f64,
    pub collapsed: bool,
}

pub fn collapse_report<T: Scalar>(h: &Tensor<T>) -> CollapseReport {
    let stds = per_dim_std(h);
    let mean_std = stds.iter().sum::<f64>() / stds.len().max(1) as f64;
    let max_std = stds.iter().copied().fold(0.0, f64::max);
    CollapseReport { mean_std, max_std, collapsed: !(mean_std >= COLLAPSE_STD) }
}
