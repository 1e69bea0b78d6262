use rand::Rng;

use super::ops::sigmoid;
use super::{glorot_uniform, orthogonal, Parameter, Tensor};
use crate::error::{Error, Result};

/// LSTM cell with gates ordered `[input, forget, candidate, output]`.
/// `w_x` is `[in, 4H]`, `w_h` is `[H, 4H]`, `bias` is `[4H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_x: Parameter,
    pub w_h: Parameter,
    pub bias: Parameter,
}

/// Forward values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `[i, f, g, o]` each of length H.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmCell {
    /// Glorot input weights, orthogonal recurrent blocks, zero bias except
    /// a forget-gate bias of 1.
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_x = glorot_uniform(input, 4 * hidden, rng);
        let mut w_h = vec![0.0; hidden * 4 * hidden];
        for gate in 0..4 {
            let block = orthogonal(hidden, rng);
            for r in 0..hidden {
                for c in 0..hidden {
                    w_h[r * 4 * hidden + gate * hidden + c] = block[r * hidden + c];
                }
            }
        }
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_x: Parameter::new(format!("{name}.w_x"), w_x, true),
            w_h: Parameter::new(
                format!("{name}.w_h"),
                Tensor::new(vec![hidden, 4 * hidden], w_h).expect("sized above"),
                true,
            ),
            bias: Parameter::new(
                format!("{name}.bias"),
                Tensor::new(vec![4 * hidden], bias).expect("sized above"),
                true,
            ),
        }
    }

    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        LstmCell {
            w_x: Parameter::zeros(format!("{name}.w_x"), &[input, 4 * hidden]),
            w_h: Parameter::zeros(format!("{name}.w_h"), &[hidden, 4 * hidden]),
            bias: Parameter::zeros(format!("{name}.bias"), &[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.value.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.value.shape()[0]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmCache> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() || h_prev.len() != hd || c_prev.len() != hd {
            return Err(Error::Shape(format!(
                "{}: got x={}, h={}, c={} for input {} hidden {hd}",
                self.w_x.name,
                x.len(),
                h_prev.len(),
                c_prev.len(),
                self.input_dim()
            )));
        }
        let mut z = self.bias.value.data().to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                z.iter_mut().zip(self.w_x.value.row(j)).for_each(|(z, w)| *z += xj * w);
            }
        }
        for (j, &hj) in h_prev.iter().enumerate() {
            if hj != 0.0 {
                z.iter_mut().zip(self.w_h.value.row(j)).for_each(|(z, w)| *z += hj * w);
            }
        }
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let (i, rest) = z.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, _) = rest.split_at(hd);
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        Ok(LstmCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates: z, c, tanh_c })
    }

    /// Back-propagates `dh`, `dc` through one step. Returns `(dh_prev,
    /// dc_prev)` and writes the input gradient for the first `dx.len()`
    /// input coordinates.
    pub fn backward(
        &mut self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        dx: Option<&mut [f64]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * cand * i * (1.0 - i);
            dz[hd + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * hd + k] = dct * i * (1.0 - cand * cand);
            dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        if self.w_x.trainable {
            for (j, &xj) in cache.x.iter().enumerate() {
                if xj != 0.0 {
                    self.w_x.grad.row_mut(j).iter_mut().zip(&dz).for_each(|(gr, d)| *gr += xj * d);
                }
            }
        }
        if self.w_h.trainable {
            for (j, &hj) in cache.h_prev.iter().enumerate() {
                if hj != 0.0 {
                    self.w_h.grad.row_mut(j).iter_mut().zip(&dz).for_each(|(gr, d)| *gr += hj * d);
                }
            }
        }
        if self.bias.trainable {
            self.bias.grad.data_mut().iter_mut().zip(&dz).for_each(|(gr, d)| *gr += d);
        }
        if let Some(dx) = dx {
            for (j, out) in dx.iter_mut().enumerate() {
                *out = self.w_x.value.row(j).iter().zip(&dz).map(|(w, d)| w * d).sum();
            }
        }
        let dh_prev = (0..hd).map(|j| self.w_h.value.row(j).iter().zip(&dz).map(|(w, d)| w * d).sum()).collect();
        (dh_prev, dc_prev)
    }

    pub fn parameters(&self) -> [&Parameter; 3] {
        [&self.w_x, &self.w_h, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

impl LstmCache {
    pub fn h(&self) -> Vec<f64> {
        let hd = self.c.len();
        let o = &self.gates[3 * hd..];
        o.iter().zip(&self.tanh_c).map(|(o, t)| o * t).collect()
    }
}

/// One LSTM step: `(h_t, c_t)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], cell: &LstmCell) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = cell.step(x, h_prev, c_prev)?;
    Ok((cache.h(), cache.c))
}
