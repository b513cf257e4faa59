use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(Argument, "shape {shape:?} needs {n} values, got {}", data.len());
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            bail!(Argument, "{what}: expected shape {shape:?}, got {:?}", self.shape);
        }
        Ok(())
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect() }
    }

    /// Stacks 2-d tensors of equal width along rows.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            bail!(Argument, "nothing to concatenate");
        };
        let w = first.shape[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.shape.len() != 2 || p.shape[1] != w {
                bail!(Argument, "row concat needs width {w}, got {:?}", p.shape);
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: vec![rows, w], data })
    }

    /// Rows `start..end` of a 2-d tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let w = self.shape[1];
        Self { shape: vec![end - start, w], data: self.data[start * w..end * w].to_vec() }
    }
}
