#![allow(dead_code)]

use mobunc::seqmodel::{
    masked_event_loss, Block, Dropout, DualTransformer, EncodedEvent, EncodedSequence, ModelConfig, Params,
};
use mobunc::staypoint::TRIP_DIM;
use mobunc::uncertainty::{draw_logit_noise, loss_numeric, loss_numeric_grad, sampled_logit_nll, sampled_logit_nll_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn central_diff(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let keep = x[i];
    x[i] = keep + STEP;
    let up = f(x);
    x[i] = keep - STEP;
    let down = f(x);
    x[i] = keep;
    (up - down) / (2.0 * STEP)
}

pub fn numeric_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let y = rng.random_range(-3.0..3.0);
        let mut x = vec![rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)];
        let (_, gp, gr) = loss_numeric_grad(y, x[0], x[1]);
        let fd: Vec<f64> = (0..2).map(|i| central_diff(&mut x, i, |v| loss_numeric(y, v[0], v[1]))).collect();
        worst = worst.max(rel_err(&[gp, gr], &fd));
    }
    worst
}

pub fn categorical_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let c = rng.random_range(2..9);
        let class = rng.random_range(0..c);
        let noise = draw_logit_noise(10, c, seed ^ trial);
        let mut u: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut s: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.5)).collect();
        let (_, du, ds) = sampled_logit_nll_grad(&u, &s, class, &noise).unwrap();
        let s0 = s.clone();
        let fu: Vec<f64> = (0..c)
            .map(|i| central_diff(&mut u, i, |v| sampled_logit_nll(v, &s0, class, &noise).unwrap()))
            .collect();
        let u0 = u.clone();
        let fs: Vec<f64> = (0..c)
            .map(|i| central_diff(&mut s, i, |v| sampled_logit_nll(&u0, v, class, &noise).unwrap()))
            .collect();
        worst = worst.max(rel_err(&du, &fu)).max(rel_err(&ds, &fs));
    }
    worst
}

/// Gradient check of one block on `groups` groups of `group` tokens with a
/// random linear readout. Returns the error for parameters and inputs.
pub fn block_error(d: usize, heads: usize, group: usize, groups: usize, masked_keys: bool, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::default();
    let block = Block::new(&mut p, "b", d, heads, 2 * d, &mut rng);
    let n = group * groups;
    let mut x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let valid: Option<Vec<bool>> = masked_keys.then(|| (0..n).map(|i| i % group != group - 1).collect());
    let loss = |params: &[f64], input: &[f64]| -> f64 {
        let (y, _) = block.forward(params, input, group, valid.as_deref()).unwrap();
        y.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = block.forward(&p.values, &x, group, valid.as_deref()).unwrap();
    let mut grad = vec![0.0; p.len()];
    let dx = block.backward(&p.values, &mut grad, &cache, &w);
    let mut values = p.values.clone();
    let x0 = x.clone();
    let fd_p: Vec<f64> = (0..values.len())
        .map(|i| central_diff(&mut values, i, |v| loss(v, &x0)))
        .collect();
    let fd_x: Vec<f64> = (0..x.len()).map(|i| central_diff(&mut x, i, |v| loss(&p.values, v))).collect();
    (rel_err(&grad, &fd_p), rel_err(&dx, &fd_x))
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        feature_blocks: 1,
        event_blocks: 1,
        n_head: 2,
        n_poi: 6,
        max_len: 8,
        max_day_events: 4,
        dropout: 0.2,
        train_samples: 4,
        ..ModelConfig::default()
    }
}

pub fn random_sequence(len: usize, n_poi: usize, seed: u64) -> EncodedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..len)
        .map(|i| EncodedEvent {
            numeric: std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
            trip: std::array::from_fn::<f64, TRIP_DIM, _>(|_| rng.random_range(-1.0..1.0)),
            poi: rng.random_range(0..n_poi),
            dow: (i / 3) % 7,
            day_pos: i % 3,
        })
        .collect();
    EncodedSequence {
        agent_id: 0,
        target_day: 1,
        events,
        refs: (0..len).map(|i| ((i / 3) as u32, (i % 3) as u32)).collect(),
        target: 3..len,
    }
}

/// Per-group relative gradient error of the full masked-event objective.
pub fn model_errors(seed: u64) -> Vec<(String, f64)> {
    let cfg = tiny_config();
    let model = DualTransformer::new(cfg.clone(), seed).unwrap();
    let seq = random_sequence(6, cfg.n_poi, seed + 1);
    let masked = vec![false, true, false, false, true, false];
    let dropout = Dropout::On(seed + 2);
    let objective = |m: &DualTransformer, grad: &mut [f64]| -> f64 {
        m.loss_and_grad(&seq, &masked, dropout, grad, |i, out| {
            masked_event_loss(out, &seq.events[i], cfg.lambda, cfg.train_samples, 1000 + i as u64)
        })
        .unwrap()
        .0
    };
    let mut grad = vec![0.0; model.n_params()];
    objective(&model, &mut grad);
    let mut probe = model.clone();
    let mut scratch = vec![0.0; model.n_params()];
    let mut fd = vec![0.0; model.n_params()];
    for i in 0..model.n_params() {
        let keep = probe.params.values[i];
        probe.params.values[i] = keep + STEP;
        let up = objective(&probe, &mut scratch);
        probe.params.values[i] = keep - STEP;
        let down = objective(&probe, &mut scratch);
        probe.params.values[i] = keep;
        fd[i] = (up - down) / (2.0 * STEP);
    }
    model
        .params
        .groups
        .iter()
        .map(|g| (g.name.clone(), rel_err(&grad[g.slot.range()], &fd[g.slot.range()])))
        .collect()
}
