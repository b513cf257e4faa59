use serde::{Deserialize, Serialize};

use super::heads::Mlp;
use super::layers::{mean_aggregate, mean_aggregate_backward};
use super::{Encoder, EncoderConfig, Mode, Module, Param, Tensor};
use crate::data::{purpose, RngStream};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Architecture echo stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    /// Hidden width of the BYOL predictor, when present.
    pub predictor_hidden: Option<usize>,
}

impl NetworkConfig {
    /// Projection `D -> D -> 128` on top of `encoder`.
    pub fn with_encoder(encoder: EncoderConfig) -> Self {
        let d = encoder.embedding_dim();
        Self { encoder, projection_hidden: d, projection_dim: 128, predictor_hidden: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.projection_hidden == 0 || self.projection_dim == 0 || self.predictor_hidden == Some(0) {
            bail!(Config, "head widths must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NetworkOutput<T> {
    /// Per-series embeddings `[B*G, D]`.
    pub embeddings: Tensor<T>,
    /// Group-aggregated representation `[B, D]`.
    pub h: Tensor<T>,
    /// Projection `[B, P]`.
    pub z: Tensor<T>,
    /// Predictor output `[B, P]` (BYOL online branch only).
    pub p: Option<Tensor<T>>,
}

/// Encoder, group-mean aggregation, projection head and optional predictor.
#[derive(Clone, Debug)]
pub struct SslNetwork<T: Scalar> {
    config: NetworkConfig,
    pub encoder: Encoder<T>,
    pub projector: Mlp<T>,
    pub predictor: Option<Mlp<T>>,
    group: Option<usize>,
}

impl<T: Scalar> SslNetwork<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::derive(seed, purpose::INIT, &[0]);
        let encoder = Encoder::new(config.encoder.clone(), &mut rng)?;
        let d = encoder.embedding_dim();
        let projector = Mlp::new("projector", d, config.projection_hidden, config.projection_dim, &mut rng);
        let predictor = config
            .predictor_hidden
            .map(|h| Mlp::new("predictor", config.projection_dim, h, config.projection_dim, &mut rng));
        Ok(Self { config, encoder, projector, predictor, group: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// `x`: `[C, B*G, T]` with the `G` series of each sample contiguous.
    pub fn forward(&mut self, x: &Tensor<T>, group: usize, mode: Mode) -> Result<NetworkOutput<T>> {
        let embeddings = self.encoder.forward(x, mode)?;
        let h = mean_aggregate(&embeddings, group)?;
        let z = self.projector.forward(&h, mode)?;
        let p = match &mut self.predictor {
            Some(pred) => Some(pred.forward(&z, mode)?),
            None => None,
        };
        self.group = (mode == Mode::Train).then_some(group);
        Ok(NetworkOutput { embeddings, h, z, p })
    }

    /// Forward without the predictor (target-branch use).
    pub fn forward_projection(&mut self, x: &Tensor<T>, group: usize, mode: Mode) -> Result<NetworkOutput<T>> {
        let embeddings = self.encoder.forward(x, mode)?;
        let h = mean_aggregate(&embeddings, group)?;
        let z = self.projector.forward(&h, mode)?;
        self.group = (mode == Mode::Train).then_some(group);
        Ok(NetworkOutput { embeddings, h, z, p: None })
    }

    /// Backpropagates `dz` (gradient at the projection) plus, when given,
    /// `dp` (gradient at the predictor output).
    pub fn backward(&mut self, dz: &Tensor<T>, dp: Option<&Tensor<T>>) -> Result<()> {
        let group = self.group.take().ok_or_else(|| crate::Error::State("network: backward without a training forward".into()))?;
        let mut gz = dz.clone();
        if let Some(dp) = dp {
            let Some(pred) = &mut self.predictor else {
                bail!(State, "predictor gradient given but the network has no predictor");
            };
            let extra = pred.backward(dp)?;
            for (a, &b) in gz.data_mut().iter_mut().zip(extra.data()) {
                *a += b;
            }
        }
        let dh = self.projector.backward(&gz)?;
        let de = mean_aggregate_backward(&dh, group);
        self.encoder.backward(&de)?;
        Ok(())
    }
}

impl<T: Scalar> Module<T> for SslNetwork<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.encoder.params();
        out.extend(self.projector.params());
        if let Some(p) = &self.predictor {
            out.extend(p.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.encoder.params_mut();
        out.extend(self.projector.params_mut());
        if let Some(p) = &mut self.predictor {
            out.extend(p.params_mut());
        }
        out
    }
}
