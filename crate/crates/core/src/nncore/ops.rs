use super::Tensor;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean of the embedding rows of `tokens` (`table` is `[V, d]`).
pub fn embed_mean(tokens: &[usize], table: &Tensor) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Empty("cannot average an empty token sequence".into()));
    }
    let rows = table.shape()[0];
    let mut out = vec![0.0; table.shape()[1]];
    for &t in tokens {
        if t >= rows {
            return Err(Error::Shape(format!("token {t} outside table of {rows} rows")));
        }
        out.iter_mut().zip(table.row(t)).for_each(|(o, e)| *o += e);
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn embed_mean_backward(tokens: &[usize], grad_out: &[f64], table_grad: &mut Tensor) {
    let n = tokens.len() as f64;
    for &t in tokens {
        table_grad.row_mut(t).iter_mut().zip(grad_out).for_each(|(g, d)| *g += d / n);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn masked_logits(logits: &[f64], target: usize, mask: &[u8]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!("{} logits vs {} mask entries", logits.len(), mask.len())));
    }
    if target >= logits.len() {
        return Err(Error::Shape(format!("target {target} outside {} actions", logits.len())));
    }
    if mask.iter().any(|&m| m > 1) {
        return Err(Error::InvalidValue("action mask must be binary".into()));
    }
    if mask[target] == 0 {
        return Err(Error::InvalidValue(format!("target action {target} is masked out")));
    }
    Ok(logits.iter().zip(mask).map(|(&l, &m)| if m == 1 { l } else { f64::NEG_INFINITY }).collect())
}

/// `-log softmax(logits + log mask)[target]`.
pub fn softmax_ce(logits: &[f64], target: usize, mask: &[u8]) -> Result<f64> {
    softmax_ce_grad(logits, target, mask).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the logits.
pub fn softmax_ce_grad(logits: &[f64], target: usize, mask: &[u8]) -> Result<(f64, Vec<f64>)> {
    let z = masked_logits(logits, target, mask)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - z[target];
    let mut grad: Vec<f64> = z.iter().map(|l| (l - log_z).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

fn check_bow(logits: &[f64], target: &[f64]) -> Result<()> {
    if logits.len() != target.len() {
        return Err(Error::Shape(format!("{} logits vs {} targets", logits.len(), target.len())));
    }
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidValue("bag-of-words target must be binary".into()));
    }
    Ok(())
}

/// Summed sigmoid cross-entropy over a binary target vector.
pub fn bow_sigmoid_ce(logits: &[f64], target: &[f64]) -> Result<f64> {
    check_bow(logits, target)?;
    // -[t log σ(l) + (1-t) log(1-σ(l))] = softplus(l) - t·l
    Ok(logits.iter().zip(target).map(|(&l, &t)| softplus(l) - t * l).sum())
}

pub fn bow_sigmoid_ce_grad(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = bow_sigmoid_ce(logits, target)?;
    Ok((loss, logits.iter().zip(target).map(|(&l, &t)| sigmoid(l) - t).collect()))
}

/// `KL(N(mu, diag sigma²) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!("{} means vs {} deviations", mu.len(), sigma.len())));
    }
    if sigma.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidValue("sigma must be strictly positive".into()));
    }
    Ok(mu.iter().zip(sigma).map(|(m, s)| 0.5 * (s * s + m * m - 1.0 - (s * s).ln())).sum())
}

/// KL from a log-variance parameterization, with gradients for `mu` and
/// `logvar`.
pub fn gaussian_kl_logvar(mu: &[f64], logvar: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut kl = 0.0;
    let mut d_lv = Vec::with_capacity(logvar.len());
    for (m, lv) in mu.iter().zip(logvar) {
        let var = lv.exp();
        kl += -0.5 * (1.0 + lv - m * m - var);
        d_lv.push(0.5 * (var - 1.0));
    }
    (kl, mu.to_vec(), d_lv)
}

/// `mu + sigma ⊙ noise`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != noise.len() {
        return Err(Error::Shape("mu, sigma and noise must have equal length".into()));
    }
    Ok(mu.iter().zip(sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}
