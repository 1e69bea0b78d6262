use crate::error::{Error, Result};

/// Largest relative disagreement between `analytic` and central
/// differences of `f` around `point`:
/// `|a - n| / max(1e-8, |a| + |n|)` maximised over coordinates.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if point.len() != analytic.len() {
        return Err(Error::Shape(format!("{} coordinates vs {} gradient entries", point.len(), analytic.len())));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let up = f(&x);
        x[k] = orig - h;
        let down = f(&x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite gradient at coordinate {k}")));
        }
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{
        bow_sigmoid_ce_grad, embed_mean, embed_mean_backward, gaussian_kl_logvar, softmax_ce_grad, Linear, LstmCell,
        Parameter, Tensor,
    };
    use crate::rng;
    use rand::Rng;

    #[test]
    fn linear_function_is_exact() {
        let w = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let err = grad_check(f, &[0.1, 0.2, 0.3], &w, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let f = |x: &[f64]| x[0] * x[0] + x[1].sin();
        let point = [0.7, 0.3];
        let good = [1.4, 0.3f64.cos()];
        assert!(grad_check(f, &point, &good, 1e-5).unwrap() < 1e-8);
        let bad = [1.4 * 1.1, 0.3f64.cos()];
        assert!(grad_check(f, &point, &bad, 1e-5).unwrap() > 1e-2);
    }

    #[test]
    fn non_finite_is_error() {
        let f = |x: &[f64]| x[0].ln();
        assert!(grad_check(f, &[0.0], &[1.0], 1e-5).is_err());
        assert!(grad_check(|_| 0.0, &[0.0], &[1.0, 2.0], 1e-5).is_err());
    }

    fn flat(params: &[&Parameter]) -> Vec<f64> {
        params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    fn load(params: &mut [&mut Parameter], x: &[f64]) {
        let mut o = 0;
        for p in params.iter_mut() {
            let n = p.len();
            p.value.data_mut().copy_from_slice(&x[o..o + n]);
            o += n;
        }
    }

    #[test]
    fn losses_pass_grad_check() {
        let mut r = rng::stream(1, "gc", 0);
        let logits: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, g) = softmax_ce_grad(&logits, 4, &[1; 6]).unwrap();
        let err = grad_check(|x| softmax_ce_grad(x, 4, &[1; 6]).unwrap().0, &logits, &g, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");

        let target = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let (_, g) = bow_sigmoid_ce_grad(&logits, &target).unwrap();
        let err = grad_check(|x| bow_sigmoid_ce_grad(x, &target).unwrap().0, &logits, &g, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");

        let (mu, lv) = logits.split_at(3);
        let (_, dmu, dlv) = gaussian_kl_logvar(mu, lv);
        let g: Vec<f64> = dmu.into_iter().chain(dlv).collect();
        let err = grad_check(|x| gaussian_kl_logvar(&x[..3], &x[3..]).0, &logits, &g, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn embedding_mean_passes_grad_check() {
        let mut r = rng::stream(2, "gc", 0);
        let table = Tensor::new(vec![5, 3], (0..15).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let tokens = [1, 3, 1, 4];
        let w = [0.3, -1.2, 0.7];
        let loss =
            |t: &Tensor| -> f64 { embed_mean(&tokens, t).unwrap().iter().zip(&w).map(|(a, b)| (a * b).sin()).sum() };
        let mean = embed_mean(&tokens, &table).unwrap();
        let dout: Vec<f64> = mean.iter().zip(&w).map(|(a, b)| (a * b).cos() * b).collect();
        let mut grad = Tensor::zeros(&[5, 3]);
        embed_mean_backward(&tokens, &dout, &mut grad);
        let err = grad_check(|x| loss(&Tensor::new(vec![5, 3], x.to_vec()).unwrap()), table.data(), grad.data(), 1e-5)
            .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    /// Three LSTM steps feeding a linear readout, checked end to end,
    /// including the gradient with respect to the inputs.
    #[test]
    fn lstm_and_linear_pass_grad_check() {
        let mut r = rng::stream(3, "gc", 0);
        let (input, hd) = (3, 4);
        let mut cell = LstmCell::new("l", input, hd, &mut r);
        let mut head = Linear::new("o", hd, 2, &mut r);
        for p in cell.parameters_mut().into_iter().chain(head.parameters_mut()) {
            p.value.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
        }
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..input).map(|_| r.random_range(-1.0..1.0)).collect()).collect();

        let run = |cell: &LstmCell, head: &Linear, xs: &[Vec<f64>]| -> f64 {
            let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
            for x in xs {
                let cache = cell.step(x, &h, &c).unwrap();
                h = cache.h();
                c = cache.c.clone();
            }
            let y = head.forward(&h).unwrap();
            softmax_ce_grad(&y, 1, &[1, 1]).unwrap().0
        };

        // Analytic.
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut caches = Vec::new();
        for x in &xs {
            let cache = cell.step(x, &h, &c).unwrap();
            h = cache.h();
            c = cache.c.clone();
            caches.push(cache);
        }
        let y = head.forward(&h).unwrap();
        let (_, dy) = softmax_ce_grad(&y, 1, &[1, 1]).unwrap();
        let mut dh = vec![0.0; hd];
        head.backward(&h, &dy, Some(&mut dh));
        let mut dc = vec![0.0; hd];
        let mut dxs = vec![vec![0.0; input]; xs.len()];
        for (t, cache) in caches.iter().enumerate().rev() {
            let (dhp, dcp) = cell.backward(cache, &dh, &dc, Some(&mut dxs[t]));
            dh = dhp;
            dc = dcp;
        }

        let params: Vec<&Parameter> = cell.parameters().into_iter().chain(head.parameters()).collect();
        let point = flat(&params);
        let analytic: Vec<f64> = params.iter().flat_map(|p| p.grad.data().iter().copied()).collect();
        let mut probe = (cell.clone(), head.clone());
        let err = grad_check(
            |x| {
                let (c, h) = &mut probe;
                let mut ps: Vec<&mut Parameter> = c.parameters_mut().into_iter().chain(h.parameters_mut()).collect();
                load(&mut ps, x);
                run(c, h, &xs)
            },
            &point,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "parameter gradient error {err}");

        let x_point: Vec<f64> = xs.concat();
        let x_grad: Vec<f64> = dxs.concat();
        let err = grad_check(
            |x| {
                let split: Vec<Vec<f64>> = x.chunks(input).map(<[f64]>::to_vec).collect();
                run(&cell, &head, &split)
            },
            &x_point,
            &x_grad,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "input gradient error {err}");
    }
}
