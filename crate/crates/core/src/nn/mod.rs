//! Trainable building blocks: a 1-d residual encoder with group aggregation,
//! MLP heads, and the checkpoint format.

mod checkpoint;
mod encoder;
mod heads;
pub mod layers;
mod network;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CKPT_MAGIC, CKPT_VERSION};
pub use encoder::{series_to_tensor, Encoder, EncoderConfig, ResBlock};
pub use heads::Mlp;
pub use layers::{mean_aggregate, mean_aggregate_backward, BatchNorm, Conv1d, Dropout, GlobalAvgPool, Linear, Relu};
pub use network::{NetworkConfig, NetworkOutput, SslNetwork};
pub use tensor::Tensor;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Weight decay applies to conv/linear weights only.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// Named tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: String, kind: ParamKind, shape: &[usize], value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self { name, kind, shape: shape.to_vec(), value, grad }
    }

    pub fn zeros(name: String, kind: ParamKind, shape: &[usize]) -> Self {
        Self::new(name, kind, shape, vec![T::zero(); shape.iter().product()])
    }
}

pub trait Module<T: Scalar> {
    /// Every tensor of the module (trainable and running statistics) in a
    /// fixed order.
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    fn num_trainable(&self) -> usize {
        self.params().iter().filter(|p| p.kind.trainable()).map(|p| p.value.len()).sum()
    }
}
