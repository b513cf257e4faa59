//! Resampling augmentation and contrastive self-supervised pretraining for
//! multichannel time series, with downstream evaluation and a synthetic
//! crop-like dataset generator.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod scalar;
pub mod ssl;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Encoder32 = nn::Encoder<f32>;
pub type Encoder64 = nn::Encoder<f64>;
pub type Network32 = nn::SslNetwork<f32>;
pub type Network64 = nn::SslNetwork<f64>;
