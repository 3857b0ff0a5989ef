use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seqmodel::linalg::log_sum_exp;

/// Heteroscedastic regression loss with predicted log-variance `logvar`:
/// `0.5 * exp(-logvar) * (y - pred)^2 + 0.5 * logvar`.
pub fn loss_numeric(y: f64, pred: f64, logvar: f64) -> f64 {
    let r = y - pred;
    0.5 * (-logvar).exp() * r * r + 0.5 * logvar
}

/// Loss and its derivatives with respect to `pred` and `logvar`.
pub fn loss_numeric_grad(y: f64, pred: f64, logvar: f64) -> (f64, f64, f64) {
    let r = y - pred;
    let w = (-logvar).exp();
    (0.5 * w * r * r + 0.5 * logvar, -w * r, 0.5 - 0.5 * w * r * r)
}

/// `samples x classes` standard normal draws.
pub fn draw_logit_noise(samples: usize, classes: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples * classes).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn check(mean: &[f64], std: &[f64], class: usize, noise: &[f64]) -> Result<usize> {
    let c = mean.len();
    if std.len() != c || c == 0 {
        return Err(Error::invalid("logit mean and std lengths differ"));
    }
    if class >= c {
        return Err(Error::invalid(format!("class {class} outside [0, {c})")));
    }
    if noise.is_empty() || noise.len() % c != 0 {
        return Err(Error::invalid("noise is not a whole number of logit draws"));
    }
    Ok(noise.len() / c)
}

/// Negative log of the class probability averaged over sampled logits
/// `mean + std * noise_t`.
pub fn sampled_logit_nll(mean: &[f64], std: &[f64], class: usize, noise: &[f64]) -> Result<f64> {
    let t = check(mean, std, class, noise)?;
    let c = mean.len();
    let mut logits = vec![0.0; c];
    let log_q: Vec<f64> = noise
        .chunks_exact(c)
        .map(|eps| {
            for k in 0..c {
                logits[k] = mean[k] + std[k] * eps[k];
            }
            logits[class] - log_sum_exp(&logits)
        })
        .collect();
    Ok((t as f64).ln() - log_sum_exp(&log_q))
}

/// Loss with gradients with respect to the logit means and stds.
pub fn sampled_logit_nll_grad(mean: &[f64], std: &[f64], class: usize, noise: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let t = check(mean, std, class, noise)?;
    let c = mean.len();
    let mut probs = vec![0.0; t * c];
    let mut log_q = vec![0.0; t];
    for (s, eps) in noise.chunks_exact(c).enumerate() {
        let p = &mut probs[s * c..(s + 1) * c];
        for k in 0..c {
            p[k] = mean[k] + std[k] * eps[k];
        }
        let lse = log_sum_exp(p);
        log_q[s] = p[class] - lse;
        for v in p.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    let lse_q = log_sum_exp(&log_q);
    let loss = (t as f64).ln() - lse_q;
    let mut d_mean = vec![0.0; c];
    let mut d_std = vec![0.0; c];
    for s in 0..t {
        let w = (log_q[s] - lse_q).exp();
        let p = &probs[s * c..(s + 1) * c];
        let eps = &noise[s * c..(s + 1) * c];
        for k in 0..c {
            let g = w * (p[k] - if k == class { 1.0 } else { 0.0 });
            d_mean[k] += g;
            d_std[k] += g * eps[k];
        }
    }
    Ok((loss, d_mean, d_std))
}

/// Sampled-logit classification loss with `samples` fresh noise draws.
pub fn loss_categorical(mean: &[f64], std: &[f64], class: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("at least one noise draw is required"));
    }
    if std.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::invalid("logit std must be nonnegative"));
    }
    sampled_logit_nll(mean, std, class, &draw_logit_noise(samples, mean.len(), seed))
}

/// Per-event objective: numeric losses plus `lambda` times categorical ones.
pub fn total_loss(numeric: &[f64], categorical: &[f64], lambda: f64) -> f64 {
    numeric.iter().sum::<f64>() + lambda * categorical.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cross_entropy(u: &[f64], c: usize) -> f64 {
        log_sum_exp(u) - u[c]
    }

    #[test]
    fn numeric_cases() {
        assert_eq!(loss_numeric(1.5, 1.5, 0.0), 0.0);
        assert_eq!(loss_numeric(3.0, 1.0, 0.0), 2.0);
    }

    #[test]
    fn numeric_gradient_matches_differences() {
        let (y, p, r) = (0.7, -0.4, 0.3);
        let (_, gp, gr) = loss_numeric_grad(y, p, r);
        let h = 1e-6;
        let fp = (loss_numeric(y, p + h, r) - loss_numeric(y, p - h, r)) / (2.0 * h);
        let fr = (loss_numeric(y, p, r + h) - loss_numeric(y, p, r - h)) / (2.0 * h);
        assert!(((gp - fp) / fp).abs() < 1e-6);
        assert!(((gr - fr) / fr).abs() < 1e-6);
    }

    #[test]
    fn noise_free_is_cross_entropy() {
        let u = [0.3, -1.2, 2.0, 0.1];
        let l = loss_categorical(&u, &[0.0; 4], 1, 7, 3).unwrap();
        assert!((l - cross_entropy(&u, 1)).abs() < 1e-12);
        let peaked = [25.0, 0.0, 0.0];
        assert!(loss_categorical(&peaked, &[0.0; 3], 0, 1, 0).unwrap() < 1e-8);
    }

    #[test]
    fn categorical_gradient_matches_differences() {
        let u = vec![0.3, -1.2, 2.0, 0.1];
        let s = vec![0.5, 1.1, 0.2, 0.8];
        let noise = draw_logit_noise(6, 4, 17);
        let (_, du, ds) = sampled_logit_nll_grad(&u, &s, 2, &noise).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut a = u.clone();
            let mut b = u.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (sampled_logit_nll(&a, &s, 2, &noise).unwrap() - sampled_logit_nll(&b, &s, 2, &noise).unwrap()) / (2.0 * h);
            assert!((fd - du[k]).abs() <= 1e-4 * fd.abs().max(1e-3));
            let mut a = s.clone();
            let mut b = s.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (sampled_logit_nll(&u, &a, 2, &noise).unwrap() - sampled_logit_nll(&u, &b, 2, &noise).unwrap()) / (2.0 * h);
            assert!((fd - ds[k]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn invalid_class_is_rejected() {
        assert!(loss_categorical(&[0.0, 1.0], &[0.0, 0.0], 2, 3, 0).is_err());
    }

    #[test]
    fn zero_lambda_drops_categorical_terms() {
        assert_eq!(total_loss(&[1.5], &[], 1.0), 1.5);
        assert_eq!(total_loss(&[1.0, 2.0], &[5.0], 0.0), 3.0);
        assert_eq!(total_loss(&[1.0], &[5.0], 1.0), 6.0);
    }
}
