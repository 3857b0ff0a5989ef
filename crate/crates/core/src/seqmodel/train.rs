use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::N_NUMERIC;
use super::encode::{EncodedEvent, EncodedSequence};
use super::model::{DecoderOutput, Dropout, DualTransformer, OutputGrad};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::uncertainty::{draw_logit_noise, loss_numeric_grad, sampled_logit_nll_grad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Sequences per gradient accumulation unit. Partial gradients are
    /// summed in a fixed order, so results do not depend on the thread count.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            clip_norm: 5.0,
            seed: 0,
            chunk: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk == 0 {
            return Err(Error::Config("batch_size and chunk must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("learning_rate must be positive; decay and clip nonnegative".into()));
        }
        Ok(())
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Objective for one masked event and its gradient with respect to the
/// decoder output. Numeric targets are in normalized units.
pub fn masked_event_loss(
    out: &DecoderOutput,
    target: &EncodedEvent,
    lambda: f64,
    noise_draws: usize,
    noise_seed: u64,
) -> Result<(f64, OutputGrad)> {
    let mut loss = 0.0;
    let mut g_mean = [0.0; N_NUMERIC];
    let mut g_logvar = [0.0; N_NUMERIC];
    for k in 0..N_NUMERIC {
        let (l, gm, gr) = loss_numeric_grad(target.numeric[k], out.numeric_mean[k], out.numeric_logvar[k]);
        loss += l;
        g_mean[k] = gm;
        g_logvar[k] = gr;
    }
    let classes = [target.poi, target.dow];
    let mut g_logits: [Vec<f64>; 2] = Default::default();
    let mut g_std: [Vec<f64>; 2] = Default::default();
    for c in 0..2 {
        let head = &out.categorical[c];
        let noise = draw_logit_noise(noise_draws, head.mean_logits.len(), derive_seed(noise_seed, &[c as u64]));
        let (l, du, ds) = sampled_logit_nll_grad(&head.mean_logits, &head.logit_std, classes[c], &noise)?;
        loss += lambda * l;
        g_logits[c] = du.into_iter().map(|v| lambda * v).collect();
        g_std[c] = ds.into_iter().map(|v| lambda * v).collect();
    }
    Ok((
        loss,
        OutputGrad {
            numeric_mean: g_mean,
            numeric_logvar: g_logvar,
            mean_logits: g_logits,
            logit_std: g_std,
        },
    ))
}

/// Each event masked independently with probability `ratio`; at least one.
pub fn random_mask<R: Rng>(len: usize, ratio: f64, rng: &mut R) -> Vec<bool> {
    let mut m: Vec<bool> = (0..len).map(|_| rng.random_bool(ratio)).collect();
    if len > 0 && !m.iter().any(|&x| x) {
        m[rng.random_range(0..len)] = true;
    }
    m
}

/// Loss and summed gradient of one sequence under a seeded random mask.
pub fn sequence_loss_grad(
    model: &DualTransformer,
    seq: &EncodedSequence,
    seed: u64,
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let masked = random_mask(seq.len(), cfg.mask_ratio, &mut rng);
    let dropout = Dropout::On(derive_seed(seed, &[1]));
    let noise = derive_seed(seed, &[2]);
    model.loss_and_grad(seq, &masked, dropout, grad, |i, out| {
        masked_event_loss(out, &seq.events[i], cfg.lambda, cfg.train_samples, derive_seed(noise, &[i as u64]))
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per masked event for each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

/// Masked-event training with Adam over shuffled minibatches.
pub fn train(model: &mut DualTransformer, data: &[EncodedSequence], cfg: &TrainConfig, exec: Exec) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    let n = model.n_params();
    let mut opt = Adam::new(n, cfg.learning_rate, cfg.weight_decay);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64])));
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let chunks: Vec<&[usize]> = batch.chunks(cfg.chunk).collect();
            let model_ref = &*model;
            let parts = exec.try_map(&chunks, |chunk| -> Result<(Vec<f64>, f64, usize)> {
                let mut g = vec![0.0; n];
                let (mut l, mut c) = (0.0, 0);
                for &s in chunk.iter() {
                    let seed = derive_seed(cfg.seed, &[epoch as u64, s as u64, 7]);
                    let (ls, cs) = sequence_loss_grad(model_ref, &data[s], seed, &mut g)?;
                    l += ls;
                    c += cs;
                }
                Ok((g, l, c))
            })?;
            let mut grad = vec![0.0; n];
            let (mut loss, mut count) = (0.0, 0usize);
            for (g, l, c) in parts {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                loss += l;
                count += c;
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            let inv = 1.0 / count as f64;
            for g in &mut grad {
                *g *= inv;
            }
            if cfg.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    let s = cfg.clip_norm / norm;
                    for g in &mut grad {
                        *g *= s;
                    }
                }
            }
            opt.step(&mut model.params.values, &grad);
            report.steps += 1;
            epoch_loss += loss;
            epoch_count += count;
        }
        let mean = epoch_loss / epoch_count as f64;
        log::info!("epoch {}: mean masked-event loss {mean:.4}", epoch + 1);
        report.epoch_loss.push(mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.1, 0.0);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn mask_always_selects_something() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for len in 1..20 {
            assert!(random_mask(len, 0.01, &mut rng).iter().any(|&m| m));
        }
    }
}
