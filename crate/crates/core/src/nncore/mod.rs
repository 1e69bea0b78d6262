//! Hand-differentiated numeric building blocks.
//!
//! Only the fixed graphs the dialog models need are supported: embedding
//! lookups, mean pooling, affine maps, an LSTM cell, the three loss terms
//! and the Gaussian reparameterization. Every forward function has a
//! matching backward that accumulates into [`Parameter::grad`].

mod adam;
pub mod checkpoint;
mod gradcheck;
mod linear;
mod lstm;
mod ops;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use gradcheck::grad_check;
pub use linear::Linear;
pub use lstm::{lstm_step, LstmCache, LstmCell};
pub use ops::{
    bow_sigmoid_ce, bow_sigmoid_ce_grad, embed_mean, embed_mean_backward, gaussian_kl, gaussian_kl_logvar,
    reparameterize, sigmoid, softmax, softmax_ce, softmax_ce_grad,
};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {expected} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }
}

/// A named value with its accumulated gradient. Frozen parameters never
/// accumulate gradient and are skipped by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, trainable }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Parameter::new(name, Tensor::zeros(shape), true)
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor { shape: vec![fan_in, fan_out], data }
}

/// Random `n × n` orthogonal matrix (Gram-Schmidt on Gaussian columns).
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for u in &cols {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut m = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            m[i * n + j] = *x;
        }
    }
    m
}
