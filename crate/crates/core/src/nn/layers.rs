//! Layers with recorded forward state and exact reverse-mode backward.
//!
//! Convolution and batch-norm activations use the `[channels, batch, time]`
//! layout so that a convolution over the whole batch is one matrix product and
//! batch statistics are contiguous per channel. Dense layers use `[batch, features]`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Mode, Module, Param, ParamKind, Tensor};
use crate::data::RngStream;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

fn no_forward(layer: &str) -> crate::Error {
    crate::Error::State(format!("{layer}: backward called without a recorded forward pass"))
}

fn he_normal<T: Scalar>(n: usize, fan_in: usize, rng: &mut RngStream) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal))).collect()
}

/// 1-d convolution with "same" padding (extra pad on the right for even kernels).
#[derive(Clone, Debug)]
pub struct Conv1d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut RngStream) -> Self {
        let fan_in = in_channels * kernel;
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                ParamKind::Weight,
                &[out_channels, in_channels, kernel],
                he_normal(out_channels * fan_in, fan_in, rng),
            ),
            bias: Param::zeros(format!("{name}.bias"), ParamKind::Bias, &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            cache: None,
        }
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: &Tensor<T>) -> Vec<T> {
        let (n, l) = (x.dim(1), x.dim(2));
        let nl = n * l;
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let mut col = vec![T::zero(); self.in_channels * k * nl];
        for ci in 0..self.in_channels {
            let src_c = &x.data()[ci * nl..(ci + 1) * nl];
            for j in 0..k {
                let off = j as isize - pad;
                let row = &mut col[(ci * k + j) * nl..(ci * k + j + 1) * nl];
                let (lo, hi) = ((-off).max(0) as usize, (l as isize - off).min(l as isize).max(0) as usize);
                if lo >= hi {
                    continue;
                }
                for b in 0..n {
                    let dst = &mut row[b * l + lo..b * l + hi];
                    let s0 = (b * l) as isize + lo as isize + off;
                    dst.copy_from_slice(&src_c[s0 as usize..s0 as usize + (hi - lo)]);
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[T], n: usize, l: usize) -> Vec<T> {
        let nl = n * l;
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let mut dx = vec![T::zero(); self.in_channels * nl];
        for ci in 0..self.in_channels {
            let dst_c = &mut dx[ci * nl..(ci + 1) * nl];
            for j in 0..k {
                let off = j as isize - pad;
                let row = &dcol[(ci * k + j) * nl..(ci * k + j + 1) * nl];
                let (lo, hi) = ((-off).max(0) as usize, (l as isize - off).min(l as isize).max(0) as usize);
                if lo >= hi {
                    continue;
                }
                for b in 0..n {
                    let s0 = ((b * l) as isize + lo as isize + off) as usize;
                    for (d, &g) in dst_c[s0..s0 + (hi - lo)].iter_mut().zip(&row[b * l + lo..b * l + hi]) {
                        *d += g;
                    }
                }
            }
        }
        dx
    }

    /// `x`: `[in_channels, batch, time]` -> `[out_channels, batch, time]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 3 || x.dim(0) != self.in_channels {
            bail!(Argument, "conv expects [{}, batch, time], got {:?}", self.in_channels, x.shape());
        }
        let (n, l) = (x.dim(1), x.dim(2));
        let nl = n * l;
        let ck = self.in_channels * self.kernel;
        let col = self.im2col(x);
        let mut out = vec![T::zero(); self.out_channels * nl];
        for (co, row) in out.chunks_mut(nl).enumerate() {
            row.fill(self.bias.value[co]);
        }
        T::gemm(self.out_channels, ck, nl, T::one(), &self.weight.value, (ck as isize, 1), &col, (nl as isize, 1), T::one(), &mut out, (nl as isize, 1));
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Tensor::from_vec(&[self.out_channels, n, l], out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| no_forward("conv1d"))?;
        let (n, l) = (x.dim(1), x.dim(2));
        dy.expect_shape(&[self.out_channels, n, l], "conv1d grad")?;
        let nl = n * l;
        let ck = self.in_channels * self.kernel;
        let col = self.im2col(&x);
        for (co, row) in dy.data().chunks(nl).enumerate() {
            self.bias.grad[co] += row.iter().copied().sum::<T>();
        }
        T::gemm(self.out_channels, nl, ck, T::one(), dy.data(), (nl as isize, 1), &col, (1, nl as isize), T::one(), &mut self.weight.grad, (ck as isize, 1));
        let mut dcol = vec![T::zero(); ck * nl];
        T::gemm(ck, self.out_channels, nl, T::one(), &self.weight.value, (1, ck as isize), dy.data(), (nl as isize, 1), T::zero(), &mut dcol, (nl as isize, 1));
        Tensor::from_vec(&[self.in_channels, n, l], self.col2im(&dcol, n, l))
    }
}

impl<T: Scalar> Module<T> for Conv1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the previous running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch normalization over every axis but the first of `[channels, ...]`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    channels: usize,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            scale: Param::new(format!("{name}.scale"), ParamKind::Scale, &[channels], vec![T::one(); channels]),
            shift: Param::zeros(format!("{name}.shift"), ParamKind::Shift, &[channels]),
            running_mean: Param::zeros(format!("{name}.running_mean"), ParamKind::RunningMean, &[channels]),
            running_var: Param::new(format!("{name}.running_var"), ParamKind::RunningVar, &[channels], vec![T::one(); channels]),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().first() != Some(&self.channels) {
            bail!(Argument, "batch norm expects {} channels first, got {:?}", self.channels, x.shape());
        }
        let m = x.len() / self.channels;
        if m == 0 {
            bail!(Argument, "batch norm over an empty batch");
        }
        let eps = T::lit(BN_EPS);
        let mut out = x.clone();
        let mf = T::lit(m as f64);
        match mode {
            Mode::Train => {
                if m < 2 {
                    bail!(Argument, "batch norm in training mode needs more than one value per channel");
                }
                let mut inv_std = Vec::with_capacity(self.channels);
                let mut xhat = vec![T::zero(); x.len()];
                let momentum = T::lit(BN_MOMENTUM);
                for c in 0..self.channels {
                    let row = &x.data()[c * m..(c + 1) * m];
                    let mean = row.iter().copied().sum::<T>() / mf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
                    let is = T::one() / (var + eps).sqrt();
                    inv_std.push(is);
                    let (g, b) = (self.scale.value[c], self.shift.value[c]);
                    for ((o, h), &v) in out.data_mut()[c * m..(c + 1) * m].iter_mut().zip(&mut xhat[c * m..(c + 1) * m]).zip(row) {
                        *h = (v - mean) * is;
                        *o = g * *h + b;
                    }
                    let unbiased = var * mf / T::lit((m - 1) as f64);
                    self.running_mean.value[c] = momentum * self.running_mean.value[c] + (T::one() - momentum) * mean;
                    self.running_var.value[c] = momentum * self.running_var.value[c] + (T::one() - momentum) * unbiased;
                }
                self.cache = Some(BnCache { xhat, inv_std });
            }
            Mode::Eval => {
                for c in 0..self.channels {
                    let is = T::one() / (self.running_var.value[c] + eps).sqrt();
                    let (mu, g, b) = (self.running_mean.value[c], self.scale.value[c], self.shift.value[c]);
                    for o in &mut out.data_mut()[c * m..(c + 1) * m] {
                        *o = g * (*o - mu) * is + b;
                    }
                }
                self.cache = None;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let BnCache { xhat, inv_std } = self.cache.take().ok_or_else(|| no_forward("batch norm"))?;
        if dy.len() != xhat.len() {
            bail!(Argument, "batch norm grad has {} values, expected {}", dy.len(), xhat.len());
        }
        let m = xhat.len() / self.channels;
        let mf = T::lit(m as f64);
        let mut dx = dy.clone();
        for c in 0..self.channels {
            let g = &dy.data()[c * m..(c + 1) * m];
            let h = &xhat[c * m..(c + 1) * m];
            let sum_g = g.iter().copied().sum::<T>();
            let sum_gh = g.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
            self.shift.grad[c] += sum_g;
            self.scale.grad[c] += sum_gh;
            let k = self.scale.value[c] * inv_std[c] / mf;
            for ((d, &gi), &hi) in dx.data_mut()[c * m..(c + 1) * m].iter_mut().zip(g).zip(h) {
                *d = k * (mf * gi - sum_g - hi * sum_gh);
            }
        }
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.scale, &self.shift, &self.running_mean, &self.running_var]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.scale, &mut self.shift, &mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Train {
            self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        }
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.take().ok_or_else(|| no_forward("relu"))?;
        let mut dx = dy.clone();
        for (d, keep) in dx.data_mut().iter_mut().zip(mask) {
            if !keep {
                *d = T::zero();
            }
        }
        Ok(dx)
    }
}

/// Fully connected layer on `[batch, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    inputs: usize,
    outputs: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, &[outputs, inputs], he_normal(outputs * inputs, inputs, rng)),
            bias: Param::zeros(format!("{name}.bias"), ParamKind::Bias, &[outputs]),
            inputs,
            outputs,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.dim(1) != self.inputs {
            bail!(Argument, "linear expects [batch, {}], got {:?}", self.inputs, x.shape());
        }
        let n = x.dim(0);
        let mut out = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            out.extend_from_slice(&self.bias.value);
        }
        T::gemm(n, self.inputs, self.outputs, T::one(), x.data(), (self.inputs as isize, 1), &self.weight.value, (1, self.inputs as isize), T::one(), &mut out, (self.outputs as isize, 1));
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Tensor::from_vec(&[n, self.outputs], out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| no_forward("linear"))?;
        let n = x.dim(0);
        dy.expect_shape(&[n, self.outputs], "linear grad")?;
        for row in dy.data().chunks(self.outputs) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        T::gemm(self.outputs, n, self.inputs, T::one(), dy.data(), (1, self.outputs as isize), x.data(), (self.inputs as isize, 1), T::one(), &mut self.weight.grad, (self.inputs as isize, 1));
        let mut dx = vec![T::zero(); n * self.inputs];
        T::gemm(n, self.outputs, self.inputs, T::one(), dy.data(), (self.outputs as isize, 1), &self.weight.value, (self.inputs as isize, 1), T::zero(), &mut dx, (self.inputs as isize, 1));
        Tensor::from_vec(&[n, self.inputs], dx)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Inverted dropout; masks come from the layer's own stream.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    rate: f64,
    rng: RngStream,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, rng: RngStream) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            bail!(Argument, "dropout rate must be in [0, 1), got {rate}");
        }
        Ok(Self { rate, rng, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_stream(&mut self, rng: RngStream) {
        self.rng = rng;
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = (mode == Mode::Train).then(|| vec![T::one(); x.len()]);
            return x.clone();
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len()).map(|_| if self.rng.gen::<f64>() < self.rate { T::zero() } else { keep }).collect();
        let mut out = x.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.take().ok_or_else(|| no_forward("dropout"))?;
        let mut dx = dy.clone();
        for (d, m) in dx.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
        Ok(dx)
    }
}

/// `[channels, batch, time]` -> `[batch, channels]` mean over time.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<[usize; 3]>,
}

impl GlobalAvgPool {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 3 {
            bail!(Argument, "pooling expects [channels, batch, time], got {:?}", x.shape());
        }
        let (c, n, l) = (x.dim(0), x.dim(1), x.dim(2));
        let lf = T::lit(l as f64);
        let mut out = vec![T::zero(); n * c];
        for ci in 0..c {
            for b in 0..n {
                let s = &x.data()[(ci * n + b) * l..(ci * n + b + 1) * l];
                out[b * c + ci] = s.iter().copied().sum::<T>() / lf;
            }
        }
        self.input_shape = (mode == Mode::Train).then_some([c, n, l]);
        Tensor::from_vec(&[n, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, n, l] = self.input_shape.take().ok_or_else(|| no_forward("global average pooling"))?;
        dy.expect_shape(&[n, c], "pooling grad")?;
        let lf = T::lit(l as f64);
        let mut dx = vec![T::zero(); c * n * l];
        for ci in 0..c {
            for b in 0..n {
                let g = dy.data()[b * c + ci] / lf;
                dx[(ci * n + b) * l..(ci * n + b + 1) * l].fill(g);
            }
        }
        Tensor::from_vec(&[c, n, l], dx)
    }
}

/// Mean over consecutive groups of `group` rows: `[batch * group, d]` -> `[batch, d]`.
pub fn mean_aggregate<T: Scalar>(x: &Tensor<T>, group: usize) -> Result<Tensor<T>> {
    if group == 0 || x.shape().len() != 2 || x.dim(0) % group != 0 {
        bail!(Argument, "cannot aggregate {:?} in groups of {group}", x.shape());
    }
    let (rows, d) = (x.dim(0), x.dim(1));
    let gf = T::lit(group as f64);
    let mut out = vec![T::zero(); rows / group * d];
    for (r, row) in x.data().chunks(d).enumerate() {
        for (o, &v) in out[(r / group) * d..(r / group + 1) * d].iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= gf;
    }
    Tensor::from_vec(&[rows / group, d], out)
}

/// Gradient of [`mean_aggregate`]: every member row receives `dy / group`.
pub fn mean_aggregate_backward<T: Scalar>(dy: &Tensor<T>, group: usize) -> Tensor<T> {
    let (b, d) = (dy.dim(0), dy.dim(1));
    let gf = T::lit(group as f64);
    let mut dx = Vec::with_capacity(b * group * d);
    for row in dy.data().chunks(d) {
        for _ in 0..group {
            dx.extend(row.iter().map(|&v| v / gf));
        }
    }
    Tensor::from_vec(&[b * group, d], dx).expect("consistent shape")
}
