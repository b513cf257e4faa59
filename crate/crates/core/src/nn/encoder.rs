use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv1d, GlobalAvgPool, Relu};
use super::{Mode, Module, Param, Tensor};
use crate::data::{RngStream, TimeSeries};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Residual encoder shape. Each block applies one convolution per entry of
/// `kernel_sizes`, all with the block's filter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub block_filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
}

impl EncoderConfig {
    /// Three blocks of (256, 512, 512) filters, kernels (8, 5, 3).
    pub fn standard(in_channels: usize) -> Self {
        Self { in_channels, block_filters: vec![256, 512, 512], kernel_sizes: vec![8, 5, 3] }
    }

    pub fn embedding_dim(&self) -> usize {
        self.block_filters.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            bail!(Config, "encoder needs at least one input channel");
        }
        if self.block_filters.is_empty() || self.block_filters.contains(&0) {
            bail!(Config, "encoder needs at least one block and non-zero filter counts");
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            bail!(Config, "encoder needs at least one convolution per block and non-zero kernels");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ResBlock<T: Scalar> {
    convs: Vec<Conv1d<T>>,
    norms: Vec<BatchNorm<T>>,
    relus: Vec<Relu>,
    shortcut: Option<(Conv1d<T>, BatchNorm<T>)>,
    out_relu: Relu,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new(name: &str, in_channels: usize, filters: usize, kernels: &[usize], rng: &mut RngStream) -> Self {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = in_channels;
        for (i, &k) in kernels.iter().enumerate() {
            convs.push(Conv1d::new(&format!("{name}.conv{i}"), cin, filters, k, rng));
            norms.push(BatchNorm::new(&format!("{name}.bn{i}"), filters));
            cin = filters;
        }
        let shortcut = (in_channels != filters)
            .then(|| (Conv1d::new(&format!("{name}.shortcut.conv"), in_channels, filters, 1, rng), BatchNorm::new(&format!("{name}.shortcut.bn"), filters)));
        Self { convs, norms, relus: vec![Relu::default(); kernels.len() - 1], shortcut, out_relu: Relu::default() }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for i in 0..=last {
            h = self.convs[i].forward(&h, mode)?;
            h = self.norms[i].forward(&h, mode)?;
            if i < last {
                h = self.relus[i].forward(&h, mode);
            }
        }
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        for (a, &b) in h.data_mut().iter_mut().zip(skip.data()) {
            *a += b;
        }
        Ok(self.out_relu.forward(&h, mode))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.out_relu.backward(dy)?;
        let mut dh = d.clone();
        for i in (0..self.convs.len()).rev() {
            if i + 1 < self.convs.len() {
                dh = self.relus[i].backward(&dh)?;
            }
            dh = self.norms[i].backward(&dh)?;
            dh = self.convs[i].backward(&dh)?;
        }
        let dskip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = bn.backward(&d)?;
                conv.backward(&s)?
            }
            None => d,
        };
        for (a, &b) in dh.data_mut().iter_mut().zip(dskip.data()) {
            *a += b;
        }
        Ok(dh)
    }
}

impl<T: Scalar> Module<T> for ResBlock<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            out.extend(c.params());
            out.extend(n.params());
        }
        if let Some((c, n)) = &self.shortcut {
            out.extend(c.params());
            out.extend(n.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(&mut self.norms) {
            out.extend(c.params_mut());
            out.extend(n.params_mut());
        }
        if let Some((c, n)) = &mut self.shortcut {
            out.extend(c.params_mut());
            out.extend(n.params_mut());
        }
        out
    }
}

/// Residual blocks followed by global average pooling over time; maps each
/// series independently to an `embedding_dim` vector.
#[derive(Clone, Debug)]
pub struct Encoder<T: Scalar> {
    config: EncoderConfig,
    blocks: Vec<ResBlock<T>>,
    pool: GlobalAvgPool,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: EncoderConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let blocks = config
            .block_filters
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let b = ResBlock::new(&format!("encoder.block{i}"), cin, f, &config.kernel_sizes, rng);
                cin = f;
                b
            })
            .collect();
        Ok(Self { config, blocks, pool: GlobalAvgPool::default() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// `x`: `[C, series, T]` -> per-series embeddings `[series, D]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 3 || x.dim(0) != self.config.in_channels {
            bail!(Argument, "encoder expects [{}, series, time], got {:?}", self.config.in_channels, x.shape());
        }
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        self.pool.forward(&h, mode)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = self.pool.backward(dy)?;
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d)?;
        }
        Ok(d)
    }

    /// Embeds every series of `series` (eval mode), `chunk` series per pass.
    pub fn embed<U: Scalar>(&mut self, series: &[&TimeSeries<U>], chunk: usize) -> Result<Tensor<T>> {
        let d = self.embedding_dim();
        let mut out = Vec::with_capacity(series.len() * d);
        for part in series.chunks(chunk.max(1)) {
            let x = series_to_tensor::<T, U>(part)?;
            out.extend_from_slice(self.forward(&x, Mode::Eval)?.data());
        }
        Tensor::from_vec(&[series.len(), d], out)
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

/// Packs equal-shape series into the `[C, series, T]` encoder layout.
pub fn series_to_tensor<T: Scalar, U: Scalar>(series: &[&TimeSeries<U>]) -> Result<Tensor<T>> {
    let Some(first) = series.first() else {
        bail!(Argument, "no series to encode");
    };
    let (l, c, n) = (first.len(), first.channels(), series.len());
    let mut data = vec![T::zero(); c * n * l];
    for (b, s) in series.iter().enumerate() {
        if s.len() != l || s.channels() != c {
            bail!(Argument, "series {b} has shape ({}, {}), expected ({l}, {c})", s.len(), s.channels());
        }
        for (i, &v) in s.values().iter().enumerate() {
            let (t, ch) = (i / c, i % c);
            data[(ch * n + b) * l + t] = T::lit(v.as_f64());
        }
    }
    Tensor::from_vec(&[c, n, l], data)
}
