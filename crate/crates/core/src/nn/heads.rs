use super::layers::{Dropout, Linear, Relu};
use super::{Mode, Module, Param, Tensor};
use crate::data::RngStream;
use crate::error::Result;
use crate::scalar::Scalar;

/// Two-layer perceptron `Linear -> ReLU -> [Dropout] -> Linear`. Serves as
/// projection head, BYOL predictor and downstream classifier.
#[derive(Clone, Debug)]
pub struct Mlp<T: Scalar> {
    fc1: Linear<T>,
    relu: Relu,
    dropout: Option<Dropout<T>>,
    fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(name: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut RngStream) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), inputs, hidden, rng),
            relu: Relu::default(),
            dropout: None,
            fc2: Linear::new(&format!("{name}.fc2"), hidden, outputs, rng),
        }
    }

    /// Classifier head with dropout after the hidden layer; masks are drawn
    /// from `dropout_rng`.
    pub fn with_dropout(name: &str, inputs: usize, hidden: usize, outputs: usize, rate: f64, rng: &mut RngStream, dropout_rng: RngStream) -> Result<Self> {
        let mut mlp = Self::new(name, inputs, hidden, outputs, rng);
        mlp.dropout = Some(Dropout::new(rate, dropout_rng)?);
        Ok(mlp)
    }

    pub fn inputs(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.fc1.outputs()
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn dropout_mut(&mut self) -> Option<&mut Dropout<T>> {
        self.dropout.as_mut()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.fc1.forward(x, mode)?;
        h = self.relu.forward(&h, mode);
        if let Some(d) = &mut self.dropout {
            h = d.forward(&h, mode);
        }
        self.fc2.forward(&h, mode)
    }

    /// Hidden activations after ReLU and dropout.
    pub fn hidden_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.fc1.forward(x, mode)?;
        h = self.relu.forward(&h, mode);
        if let Some(d) = &mut self.dropout {
            h = d.forward(&h, mode);
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = self.fc2.backward(dy)?;
        if let Some(drop) = &mut self.dropout {
            d = drop.backward(&d)?;
        }
        d = self.relu.backward(&d)?;
        self.fc1.backward(&d)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.fc1.params();
        out.extend(self.fc2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.fc1.params_mut();
        out.extend(self.fc2.params_mut());
        out
    }
}
