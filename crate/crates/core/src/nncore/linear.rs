use rand::Rng;

use super::{glorot_uniform, Parameter};
use crate::error::{Error, Result};

/// `y = x · W + b` with `W` stored as `[in, out]` so sparse inputs can skip
/// zero rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), glorot_uniform(input, output, rng), true),
            bias: Parameter::zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "{}: input of {} for a layer expecting {}",
                self.weight.name,
                x.len(),
                self.input_dim()
            )));
        }
        let mut y = self.bias.value.data().to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                y.iter_mut().zip(self.weight.value.row(j)).for_each(|(y, w)| *y += xj * w);
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and, when `dx` is given, writes the
    /// input gradient for its first `dx.len()` coordinates.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        if self.weight.trainable {
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    self.weight.grad.row_mut(j).iter_mut().zip(dy).for_each(|(g, d)| *g += xj * d);
                }
            }
        }
        if self.bias.trainable {
            self.bias.grad.data_mut().iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        }
        if let Some(dx) = dx {
            for (j, out) in dx.iter_mut().enumerate() {
                *out = self.weight.value.row(j).iter().zip(dy).map(|(w, d)| w * d).sum();
            }
        }
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
