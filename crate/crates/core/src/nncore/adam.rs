use super::Parameter;
use crate::error::{Error, Result};

/// Bias-corrected Adam. Moments are allocated on the first step and kept
/// in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.001)
    }
}

/// One update. Frozen parameters are untouched, and so is every element
/// whose gradient is exactly zero (its moments are left as they were).
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState) -> Result<()> {
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(Error::Shape(format!("optimizer tracks {} parameters, got {}", state.first.len(), params.len())));
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.len() != m.len() || p.grad.len() != p.value.len() {
            return Err(Error::Shape(format!("{}: optimizer state does not match", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        if !p.trainable {
            continue;
        }
        let grads = p.grad.data().to_vec();
        for (k, value) in p.value.data_mut().iter_mut().enumerate() {
            let g = grads[k];
            if g == 0.0 {
                continue;
            }
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *value -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales all trainable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let norm =
        params.iter().filter(|p| p.trainable).flat_map(|p| p.grad.data().iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
