use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{Block, BlockCache};
use super::config::{ModelConfig, N_DOW, N_NUMERIC, N_TOKENS};
use super::encode::{EncodedEvent, EncodedSequence};
use super::params::{Init, Linear, Params, Slot};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, mix64};
use crate::staypoint::TRIP_DIM;

/// Token slot of each input feature.
const TRIP_TOKEN: usize = N_NUMERIC;
const POI_TOKEN: usize = N_NUMERIC + 1;
const DOW_TOKEN: usize = N_NUMERIC + 2;

/// Initial bias of the categorical log-stdev outputs.
const LOG_SIGMA_INIT: f64 = -2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalOutput {
    pub mean_logits: Vec<f64>,
    /// Per-class logit standard deviation, always nonnegative.
    pub logit_std: Vec<f64>,
}

/// Decoder prediction for one masked event, numeric values in normalized
/// units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderOutput {
    pub numeric_mean: [f64; N_NUMERIC],
    pub numeric_logvar: [f64; N_NUMERIC],
    /// POI then day-of-week.
    pub categorical: [CategoricalOutput; 2],
}

impl DecoderOutput {
    fn from_row(row: &[f64], n_poi: usize) -> Self {
        let mut numeric_mean = [0.0; N_NUMERIC];
        let mut numeric_logvar = [0.0; N_NUMERIC];
        numeric_mean.copy_from_slice(&row[..N_NUMERIC]);
        numeric_logvar.copy_from_slice(&row[N_NUMERIC..2 * N_NUMERIC]);
        let cat = |start: usize, c: usize| CategoricalOutput {
            mean_logits: row[start..start + c].to_vec(),
            logit_std: row[start + c..start + 2 * c].iter().map(|v| v.exp()).collect(),
        };
        let poi_start = 2 * N_NUMERIC;
        let dow_start = poi_start + 2 * n_poi;
        DecoderOutput {
            numeric_mean,
            numeric_logvar,
            categorical: [cat(poi_start, n_poi), cat(dow_start, N_DOW)],
        }
    }
}

/// Gradient of the loss with respect to one decoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrad {
    pub numeric_mean: [f64; N_NUMERIC],
    pub numeric_logvar: [f64; N_NUMERIC],
    pub mean_logits: [Vec<f64>; 2],
    pub logit_std: [Vec<f64>; 2],
}

impl OutputGrad {
    fn into_row(self, out: &DecoderOutput, row: &mut [f64]) {
        row[..N_NUMERIC].copy_from_slice(&self.numeric_mean);
        row[N_NUMERIC..2 * N_NUMERIC].copy_from_slice(&self.numeric_logvar);
        let mut start = 2 * N_NUMERIC;
        for c in 0..2 {
            let n = out.categorical[c].mean_logits.len();
            row[start..start + n].copy_from_slice(&self.mean_logits[c]);
            for k in 0..n {
                // logit_std = exp(log_sigma)
                row[start + n + k] = self.logit_std[c][k] * out.categorical[c].logit_std[k];
            }
            start += 2 * n;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// One dropout draw, keyed by this seed and each event's position.
    On(u64),
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    num_w: Slot,
    num_b: Slot,
    trip_w: Slot,
    trip_b: Slot,
    poi_table: Slot,
    dow_table: Slot,
    mask_token: Slot,
    pos_seq: Slot,
    pos_day: Slot,
    feature_blocks: Vec<Block>,
    event_blocks: Vec<Block>,
    head: Linear,
}

/// Dual transformer: per-event feature-level attention over feature tokens,
/// then event-level attention over the summed event embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTransformer {
    pub config: ModelConfig,
    pub params: Params,
    layout: Layout,
}

struct Tokens {
    /// `n x F x D`, after dropout.
    data: Vec<f64>,
    /// Dropout multipliers, same shape, when dropout is active.
    scale: Option<Vec<f64>>,
}

/// Forward state of one sequence, kept for backpropagation.
struct Trace {
    tokens: Tokens,
    unmasked: Vec<usize>,
    feature_caches: Vec<BlockCache>,
    event_caches: Vec<BlockCache>,
    masked: Vec<usize>,
    head_in: Vec<f64>,
    outputs: Vec<DecoderOutput>,
}

impl DualTransformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let d = config.d_model;
        let mut p = Params::default();
        let num_w = p.alloc("tokenizer.numeric.weight", N_NUMERIC, d, Init::Xavier, rng);
        let num_b = p.alloc("tokenizer.numeric.bias", N_NUMERIC, d, Init::Normal(0.1), rng);
        let trip_w = p.alloc("tokenizer.trip.weight", TRIP_DIM, d, Init::Xavier, rng);
        let trip_b = p.alloc("tokenizer.trip.bias", 1, d, Init::Normal(0.1), rng);
        let poi_table = p.alloc("tokenizer.poi.table", config.n_poi, d, Init::Normal(0.3), rng);
        let dow_table = p.alloc("tokenizer.dow.table", N_DOW, d, Init::Normal(0.3), rng);
        let mask_token = p.alloc("mask_token", 1, d, Init::Normal(0.1), rng);
        let pos_seq = p.alloc("position.sequence", config.max_len, d, Init::Normal(0.1), rng);
        let pos_day = p.alloc("position.within_day", config.max_day_events, d, Init::Normal(0.1), rng);
        let hidden = config.ffn_mult * d;
        let feature_blocks = (0..config.feature_blocks)
            .map(|i| Block::new(&mut p, &format!("feature.{i}"), d, config.n_head, hidden, rng))
            .collect();
        let event_blocks = (0..config.event_blocks)
            .map(|i| Block::new(&mut p, &format!("event.{i}"), d, config.n_head, hidden, rng))
            .collect();
        let head = Linear::new(&mut p, "decoder", d, config.output_dim(), rng);
        let mut start = head.b.offset + 2 * N_NUMERIC;
        for c in config.class_counts() {
            for v in &mut p.values[start + c..start + 2 * c] {
                *v = LOG_SIGMA_INIT;
            }
            start += 2 * c;
        }
        Ok(DualTransformer {
            config,
            params: p,
            layout: Layout {
                num_w,
                num_b,
                trip_w,
                trip_b,
                poi_table,
                dow_table,
                mask_token,
                pos_seq,
                pos_day,
                feature_blocks,
                event_blocks,
                head,
            },
        })
    }

    /// Rebuild a model from a configuration and a parameter vector.
    pub fn with_params(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut m = DualTransformer::new(config, 0)?;
        if values.len() != m.params.len() {
            return Err(Error::Schema(format!(
                "parameter count {} does not match the configuration ({})",
                values.len(),
                m.params.len()
            )));
        }
        m.params.values = values;
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn d(&self) -> usize {
        self.config.d_model
    }

    fn dropout_scale(&self, seed: u64, pos: usize) -> Vec<f64> {
        let d = self.d();
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        let key = derive_seed(seed, &[pos as u64]);
        (0..N_TOKENS * d)
            .map(|k| {
                let u = (mix64(key ^ (k as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)) >> 11) as f64 / (1u64 << 53) as f64;
                if u < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    /// Feature tokens (`F x D`) of one event at sequence position `pos`.
    pub fn tokenize_features(&self, ev: &EncodedEvent, pos: usize, dropout: Dropout) -> Result<Vec<f64>> {
        let (tokens, _) = self.tokenize_one(ev, pos, dropout)?;
        Ok(tokens)
    }

    fn tokenize_one(&self, ev: &EncodedEvent, pos: usize, dropout: Dropout) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let l = &self.layout;
        let v = &self.params.values;
        let d = self.d();
        if ev.poi >= self.config.n_poi {
            return Err(Error::invalid(format!("poi {} outside [0, {})", ev.poi, self.config.n_poi)));
        }
        if ev.dow >= N_DOW {
            return Err(Error::invalid(format!("dow {} outside [0, 7)", ev.dow)));
        }
        let mut t = vec![0.0; N_TOKENS * d];
        for f in 0..N_NUMERIC {
            let (w, b) = (&v[l.num_w.row(f)], &v[l.num_b.row(f)]);
            for j in 0..d {
                t[f * d + j] = b[j] + ev.numeric[f] * w[j];
            }
        }
        let trip = &mut t[TRIP_TOKEN * d..(TRIP_TOKEN + 1) * d];
        trip.copy_from_slice(&v[l.trip_b.range()]);
        for (k, &x) in ev.trip.iter().enumerate() {
            if x != 0.0 {
                for (o, w) in trip.iter_mut().zip(&v[l.trip_w.row(k)]) {
                    *o += x * w;
                }
            }
        }
        t[POI_TOKEN * d..(POI_TOKEN + 1) * d].copy_from_slice(&v[l.poi_table.row(ev.poi)]);
        t[DOW_TOKEN * d..(DOW_TOKEN + 1) * d].copy_from_slice(&v[l.dow_table.row(ev.dow)]);
        let scale = match dropout {
            Dropout::On(seed) if self.config.dropout > 0.0 => {
                let s = self.dropout_scale(seed, pos);
                for (x, m) in t.iter_mut().zip(&s) {
                    *x *= m;
                }
                Some(s)
            }
            _ => None,
        };
        Ok((t, scale))
    }

    fn tokenize_events(&self, seq: &EncodedSequence, which: &[usize], dropout: Dropout) -> Result<Tokens> {
        let mut data = Vec::with_capacity(which.len() * N_TOKENS * self.d());
        let mut scale: Option<Vec<f64>> = None;
        for &i in which {
            let (t, s) = self.tokenize_one(&seq.events[i], i, dropout)?;
            data.extend_from_slice(&t);
            if let Some(s) = s {
                scale.get_or_insert_with(Vec::new).extend_from_slice(&s);
            }
        }
        Ok(Tokens { data, scale })
    }

    /// Feature-level stack over `n x F` tokens; no positional information.
    pub fn feature_level_encode(&self, tokens: &[f64]) -> Result<Vec<f64>> {
        Ok(self.feature_level(tokens)?.0)
    }

    fn feature_level(&self, tokens: &[f64]) -> Result<(Vec<f64>, Vec<BlockCache>)> {
        let p = &self.params.values;
        let mut x = tokens.to_vec();
        let mut caches = Vec::with_capacity(self.layout.feature_blocks.len());
        for b in &self.layout.feature_blocks {
            let (y, c) = b.forward(p, &x, N_TOKENS, None)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    fn position_rows(&self, seq_pos: usize, day_pos: usize) -> Result<(&[f64], &[f64])> {
        if seq_pos >= self.config.max_len {
            return Err(Error::invalid(format!("sequence position {seq_pos} exceeds max_len")));
        }
        if day_pos >= self.config.max_day_events {
            return Err(Error::invalid(format!(
                "within-day index {day_pos} exceeds table size {}",
                self.config.max_day_events
            )));
        }
        let v = &self.params.values;
        Ok((&v[self.layout.pos_seq.row(seq_pos)], &v[self.layout.pos_day.row(day_pos)]))
    }

    /// Sum feature tokens into event rows and add both position embeddings.
    /// `encoded` holds `n x F x D` feature-level outputs; `positions` gives
    /// `(sequence index, within-day index)` per event.
    pub fn event_level_encode(&self, encoded: &[f64], positions: &[(usize, usize)]) -> Result<Vec<f64>> {
        let d = self.d();
        if encoded.len() != positions.len() * N_TOKENS * d {
            return Err(Error::invalid("feature tokens do not match the position list"));
        }
        let mut e0 = vec![0.0; positions.len() * d];
        for (i, &(sp, dp)) in positions.iter().enumerate() {
            let row = &mut e0[i * d..(i + 1) * d];
            for f in 0..N_TOKENS {
                for (o, x) in row.iter_mut().zip(&encoded[(i * N_TOKENS + f) * d..][..d]) {
                    *o += x;
                }
            }
            let (a, b) = self.position_rows(sp, dp)?;
            for j in 0..d {
                row[j] += a[j] + b[j];
            }
        }
        Ok(self.event_level(e0)?.0)
    }

    fn event_level(&self, e0: Vec<f64>) -> Result<(Vec<f64>, Vec<BlockCache>)> {
        let p = &self.params.values;
        let n = e0.len() / self.d();
        let mut x = e0;
        let mut caches = Vec::with_capacity(self.layout.event_blocks.len());
        for b in &self.layout.event_blocks {
            let (y, c) = b.forward(p, &x, n, None)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    /// Event input rows for every position: summed feature-level outputs for
    /// `unmasked` events, `F` copies of the mask token for the rest.
    fn event_inputs(&self, seq: &EncodedSequence, unmasked: &[usize], feat_out: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        let v = &self.params.values;
        let mask = &v[self.layout.mask_token.range()];
        let mut e0 = vec![0.0; seq.len() * d];
        for row in e0.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = N_TOKENS as f64 * mask[j];
            }
        }
        for (u, &i) in unmasked.iter().enumerate() {
            let row = &mut e0[i * d..(i + 1) * d];
            row.fill(0.0);
            for f in 0..N_TOKENS {
                for (o, x) in row.iter_mut().zip(&feat_out[(u * N_TOKENS + f) * d..][..d]) {
                    *o += x;
                }
            }
        }
        for (i, row) in e0.chunks_exact_mut(d).enumerate() {
            let (a, b) = self.position_rows(i, seq.events[i].day_pos)?;
            for j in 0..d {
                row[j] += a[j] + b[j];
            }
        }
        Ok(e0)
    }

    fn check_mask(&self, seq: &EncodedSequence, mask_set: &[usize]) -> Result<Vec<bool>> {
        if mask_set.is_empty() {
            return Err(Error::invalid("mask set is empty"));
        }
        if seq.len() > self.config.max_len {
            return Err(Error::invalid("sequence longer than max_len"));
        }
        let mut masked = vec![false; seq.len()];
        for &i in mask_set {
            if i >= seq.len() {
                return Err(Error::invalid(format!("mask index {i} outside sequence of length {}", seq.len())));
            }
            masked[i] = true;
        }
        Ok(masked)
    }

    fn trace(&self, seq: &EncodedSequence, masked: &[bool], dropout: Dropout) -> Result<Trace> {
        let d = self.d();
        let unmasked: Vec<usize> = (0..seq.len()).filter(|&i| !masked[i]).collect();
        let masked_idx: Vec<usize> = (0..seq.len()).filter(|&i| masked[i]).collect();
        let tokens = self.tokenize_events(seq, &unmasked, dropout)?;
        let (feat_out, feature_caches) = self.feature_level(&tokens.data)?;
        let e0 = self.event_inputs(seq, &unmasked, &feat_out)?;
        let (ebar, event_caches) = self.event_level(e0)?;
        let mut head_in = Vec::with_capacity(masked_idx.len() * d);
        for &i in &masked_idx {
            head_in.extend_from_slice(&ebar[i * d..(i + 1) * d]);
        }
        let rows = self.layout.head.forward(&self.params.values, &head_in, masked_idx.len());
        let w = self.config.output_dim();
        let outputs = rows
            .chunks_exact(w)
            .map(|r| DecoderOutput::from_row(r, self.config.n_poi))
            .collect();
        Ok(Trace {
            tokens,
            unmasked,
            feature_caches,
            event_caches,
            masked: masked_idx,
            head_in,
            outputs,
        })
    }

    /// Predict the events in `mask_set` with their feature tokens replaced by
    /// the mask token. With `stochastic` set, dropout is active and `seed`
    /// selects the draw.
    pub fn forward_masked(
        &self,
        seq: &EncodedSequence,
        mask_set: &[usize],
        stochastic: bool,
        seed: u64,
    ) -> Result<Vec<DecoderOutput>> {
        let masked = self.check_mask(seq, mask_set)?;
        let dropout = if stochastic { Dropout::On(seed) } else { Dropout::Off };
        let trace = self.trace(seq, &masked, dropout)?;
        let order: Vec<usize> = mask_set
            .iter()
            .map(|i| trace.masked.binary_search(i).expect("masked index"))
            .collect();
        Ok(order.into_iter().map(|k| trace.outputs[k].clone()).collect())
    }

    /// Deterministic encoder output (`L x D`) with no event masked.
    pub fn embed(&self, seq: &EncodedSequence) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..seq.len()).collect();
        let tokens = self.tokenize_events(seq, &all, Dropout::Off)?;
        let (feat_out, _) = self.feature_level(&tokens.data)?;
        let e0 = self.event_inputs(seq, &all, &feat_out)?;
        Ok(self.event_level(e0)?.0)
    }

    /// Predictions for each position in `positions`, masked one at a time,
    /// under each dropout seed in `seeds`. Result is indexed
    /// `[position][seed]` and equals calling [`Self::forward_masked`] with a
    /// single-element mask set per pair, sharing the feature-level pass
    /// across positions.
    pub fn predict_each(&self, seq: &EncodedSequence, positions: &[usize], seeds: &[Option<u64>]) -> Result<Vec<Vec<DecoderOutput>>> {
        let d = self.d();
        for &i in positions {
            self.check_mask(seq, &[i])?;
        }
        let all: Vec<usize> = (0..seq.len()).collect();
        let mut out: Vec<Vec<DecoderOutput>> = vec![Vec::with_capacity(seeds.len()); positions.len()];
        let v = &self.params.values;
        let mask = &v[self.layout.mask_token.range()];
        for &seed in seeds {
            let dropout = seed.map_or(Dropout::Off, Dropout::On);
            let tokens = self.tokenize_events(seq, &all, dropout)?;
            let (feat_out, _) = self.feature_level(&tokens.data)?;
            let base = self.event_inputs(seq, &all, &feat_out)?;
            for (k, &i) in positions.iter().enumerate() {
                let mut e0 = base.clone();
                let (a, b) = self.position_rows(i, seq.events[i].day_pos)?;
                for j in 0..d {
                    e0[i * d + j] = N_TOKENS as f64 * mask[j] + a[j] + b[j];
                }
                let (ebar, _) = self.event_level(e0)?;
                let row = self.layout.head.forward(v, &ebar[i * d..(i + 1) * d], 1);
                out[k].push(DecoderOutput::from_row(&row, self.config.n_poi));
            }
        }
        Ok(out)
    }

    /// Forward with `masked` events hidden, then backpropagate a loss
    /// evaluated on the outputs. `loss` maps `(masked position, output)` to
    /// `(loss, gradient)`. Gradients are added into `grad`; returns the summed
    /// loss and the masked positions.
    pub fn loss_and_grad<F>(
        &self,
        seq: &EncodedSequence,
        masked: &[bool],
        dropout: Dropout,
        grad: &mut [f64],
        mut loss: F,
    ) -> Result<(f64, usize)>
    where
        F: FnMut(usize, &DecoderOutput) -> Result<(f64, OutputGrad)>,
    {
        if masked.len() != seq.len() || !masked.iter().any(|&m| m) {
            return Err(Error::invalid("masked flags must match the sequence and select at least one event"));
        }
        if grad.len() != self.n_params() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        let trace = self.trace(seq, masked, dropout)?;
        let w = self.config.output_dim();
        let mut d_rows = vec![0.0; trace.masked.len() * w];
        let mut total = 0.0;
        for (k, &i) in trace.masked.iter().enumerate() {
            let (l, g) = loss(i, &trace.outputs[k])?;
            total += l;
            g.into_row(&trace.outputs[k], &mut d_rows[k * w..(k + 1) * w]);
        }
        self.backward(seq, &trace, &d_rows, grad);
        Ok((total, trace.masked.len()))
    }

    fn backward(&self, seq: &EncodedSequence, trace: &Trace, d_rows: &[f64], grad: &mut [f64]) {
        let d = self.d();
        let l = &self.layout;
        let p = &self.params.values;
        let d_head = l.head.backward(p, grad, &trace.head_in, trace.masked.len(), d_rows);
        let mut dx = vec![0.0; seq.len() * d];
        for (k, &i) in trace.masked.iter().enumerate() {
            dx[i * d..(i + 1) * d].copy_from_slice(&d_head[k * d..(k + 1) * d]);
        }
        for (b, c) in l.event_blocks.iter().zip(&trace.event_caches).rev() {
            dx = b.backward(p, grad, c, &dx);
        }
        // dx is now dL/dE0.
        let mut is_masked = vec![false; seq.len()];
        for &i in &trace.masked {
            is_masked[i] = true;
        }
        for (i, row) in dx.chunks_exact(d).enumerate() {
            let sp = l.pos_seq.row(i);
            let dp = l.pos_day.row(seq.events[i].day_pos);
            for j in 0..d {
                grad[sp.start + j] += row[j];
                grad[dp.start + j] += row[j];
            }
            if is_masked[i] {
                let mt = l.mask_token.range();
                for j in 0..d {
                    grad[mt.start + j] += N_TOKENS as f64 * row[j];
                }
            }
        }
        let nu = trace.unmasked.len();
        if nu == 0 {
            return;
        }
        let mut dt = vec![0.0; nu * N_TOKENS * d];
        for (u, &i) in trace.unmasked.iter().enumerate() {
            for f in 0..N_TOKENS {
                dt[(u * N_TOKENS + f) * d..][..d].copy_from_slice(&dx[i * d..(i + 1) * d]);
            }
        }
        for (b, c) in l.feature_blocks.iter().zip(&trace.feature_caches).rev() {
            dt = b.backward(p, grad, c, &dt);
        }
        if let Some(s) = &trace.tokens.scale {
            for (g, m) in dt.iter_mut().zip(s) {
                *g *= m;
            }
        }
        for (u, &i) in trace.unmasked.iter().enumerate() {
            let ev = &seq.events[i];
            let t = &dt[u * N_TOKENS * d..(u + 1) * N_TOKENS * d];
            for f in 0..N_NUMERIC {
                let (w, b) = (l.num_w.row(f), l.num_b.row(f));
                for j in 0..d {
                    grad[w.start + j] += ev.numeric[f] * t[f * d + j];
                    grad[b.start + j] += t[f * d + j];
                }
            }
            let tt = &t[TRIP_TOKEN * d..(TRIP_TOKEN + 1) * d];
            let tb = l.trip_b.range();
            for j in 0..d {
                grad[tb.start + j] += tt[j];
            }
            for (k, &x) in ev.trip.iter().enumerate() {
                if x != 0.0 {
                    let w = l.trip_w.row(k);
                    for j in 0..d {
                        grad[w.start + j] += x * tt[j];
                    }
                }
            }
            let pr = l.poi_table.row(ev.poi);
            let dr = l.dow_table.row(ev.dow);
            for j in 0..d {
                grad[pr.start + j] += t[POI_TOKEN * d + j];
                grad[dr.start + j] += t[DOW_TOKEN * d + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            feature_blocks: 1,
            event_blocks: 1,
            n_head: 2,
            n_poi: 5,
            max_len: 16,
            max_day_events: 8,
            dropout: 0.3,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn toy_sequence(len: usize, seed: u64) -> EncodedSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let events = (0..len)
            .map(|i| EncodedEvent {
                numeric: std::array::from_fn(|_| rng.random_range(-1.5..1.5)),
                trip: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                poi: rng.random_range(0..5),
                dow: (i / 3) % 7,
                day_pos: i % 3,
            })
            .collect();
        EncodedSequence {
            agent_id: 0,
            target_day: 0,
            events,
            refs: (0..len).map(|i| ((i / 3) as u32, (i % 3) as u32)).collect(),
            target: 0..len,
        }
    }

    #[test]
    fn zero_numeric_input_gives_the_bias() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let mut seq = toy_sequence(1, 2);
        seq.events[0].numeric[2] = 0.0;
        let t = m.tokenize_features(&seq.events[0], 0, Dropout::Off).unwrap();
        let d = 8;
        assert_eq!(&t[2 * d..3 * d], m.params.get(m.layout.num_b).chunks(d).nth(2).unwrap());
    }

    #[test]
    fn poi_change_touches_only_its_token() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let seq = toy_sequence(1, 2);
        let mut other = seq.events[0].clone();
        other.poi = (other.poi + 1) % 5;
        let a = m.tokenize_features(&seq.events[0], 0, Dropout::Off).unwrap();
        let b = m.tokenize_features(&other, 0, Dropout::Off).unwrap();
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x == y, k / 8 != POI_TOKEN, "token entry {k}");
        }
        other.poi = 5;
        assert!(m.tokenize_features(&other, 0, Dropout::Off).is_err());
    }

    #[test]
    fn tokens_without_dropout_are_repeatable() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let seq = toy_sequence(1, 2);
        let a = m.tokenize_features(&seq.events[0], 0, Dropout::Off).unwrap();
        assert_eq!(a, m.tokenize_features(&seq.events[0], 0, Dropout::Off).unwrap());
        let b = m.tokenize_features(&seq.events[0], 0, Dropout::On(3)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_feature_stack_is_identity() {
        let cfg = ModelConfig {
            feature_blocks: 0,
            ..tiny_config()
        };
        let m = DualTransformer::new(cfg, 1).unwrap();
        let x: Vec<f64> = (0..2 * N_TOKENS * 8).map(|i| (i as f64).sin()).collect();
        assert_eq!(m.feature_level_encode(&x).unwrap(), x);
    }

    #[test]
    fn single_event_without_event_blocks_is_sum_plus_positions() {
        let cfg = ModelConfig {
            event_blocks: 0,
            ..tiny_config()
        };
        let m = DualTransformer::new(cfg, 1).unwrap();
        let x: Vec<f64> = (0..N_TOKENS * 8).map(|i| (i as f64 * 0.3).cos()).collect();
        let out = m.event_level_encode(&x, &[(2, 1)]).unwrap();
        let v = &m.params.values;
        for j in 0..8 {
            let sum: f64 = (0..N_TOKENS).map(|f| x[f * 8 + j]).sum();
            let want = sum + v[m.layout.pos_seq.row(2)][j] + v[m.layout.pos_day.row(1)][j];
            assert!((out[j] - want).abs() < 1e-12);
        }
        assert!(m.event_level_encode(&x, &[(2, 8)]).is_err());
    }

    #[test]
    fn within_day_position_and_order_matter() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let x: Vec<f64> = (0..N_TOKENS * 8).map(|i| (i as f64 * 0.3).cos()).collect();
        let two: Vec<f64> = x.iter().chain(&x).copied().collect();
        let a = m.event_level_encode(&two, &[(0, 0), (1, 1)]).unwrap();
        let b = m.event_level_encode(&two, &[(0, 0), (1, 2)]).unwrap();
        assert_ne!(a, b);
        let y: Vec<f64> = x.iter().map(|v| v * 2.0 - 0.5).collect();
        let xy: Vec<f64> = x.iter().chain(&y).copied().collect();
        let yx: Vec<f64> = y.iter().chain(&x).copied().collect();
        let p = m.event_level_encode(&xy, &[(0, 0), (1, 1)]).unwrap();
        let q = m.event_level_encode(&yx, &[(0, 0), (1, 1)]).unwrap();
        assert_ne!(&p[..8], &q[8..]);
    }

    #[test]
    fn forward_masked_determinism_and_stochasticity() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let seq = toy_sequence(6, 4);
        let a = m.forward_masked(&seq, &[1, 4], false, 0).unwrap();
        assert_eq!(a, m.forward_masked(&seq, &[1, 4], false, 99).unwrap());
        let s1 = m.forward_masked(&seq, &[1], true, 1).unwrap();
        let s2 = m.forward_masked(&seq, &[1], true, 2).unwrap();
        assert_ne!(s1, s2);
        assert!(m.forward_masked(&seq, &[], false, 0).is_err());
        assert!(m.forward_masked(&seq, &[6], false, 0).is_err());
        for o in &a {
            assert!(o.categorical.iter().all(|c| c.logit_std.iter().all(|&s| s >= 0.0)));
        }
    }

    #[test]
    fn shared_pass_prediction_matches_single_masks() {
        let m = DualTransformer::new(tiny_config(), 1).unwrap();
        let seq = toy_sequence(7, 5);
        let seeds = [Some(10), None, Some(11)];
        let got = m.predict_each(&seq, &[0, 3, 6], &seeds).unwrap();
        for (k, &i) in [0usize, 3, 6].iter().enumerate() {
            for (t, s) in seeds.iter().enumerate() {
                let want = m.forward_masked(&seq, &[i], s.is_some(), s.unwrap_or(0)).unwrap();
                let (a, b) = (&got[k][t], &want[0]);
                for (x, y) in a.numeric_mean.iter().zip(&b.numeric_mean) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
