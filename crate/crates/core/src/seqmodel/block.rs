use rand::Rng;

use super::attention::{masked_softmax, mix_values};
use super::linalg::{gelu, gelu_grad};
use super::params::{Linear, Params};
use crate::error::Result;

/// Transformer block without normalization:
/// `h = x + MSA(x)`, `y = h + FFN(h)`, with a GELU feed-forward layer.
/// Tokens are laid out as consecutive groups of `group` rows; attention runs
/// within each group only.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub qkv: Linear,
    pub proj: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub d: usize,
    pub heads: usize,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache {
    n: usize,
    group: usize,
    x: Vec<f64>,
    qkv: Vec<f64>,
    weights: Vec<f64>,
    o: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    g: Vec<f64>,
}

impl Block {
    pub fn new<R: Rng>(p: &mut Params, name: &str, d: usize, heads: usize, hidden: usize, rng: &mut R) -> Self {
        Block {
            qkv: Linear::new(p, &format!("{name}.attn.qkv"), d, 3 * d, rng),
            proj: Linear::new(p, &format!("{name}.attn.out"), d, d, rng),
            ff1: Linear::new(p, &format!("{name}.ffn.in"), d, hidden, rng),
            ff2: Linear::new(p, &format!("{name}.ffn.out"), hidden, d, rng),
            d,
            heads,
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], group: usize, valid: Option<&[bool]>) -> Result<(Vec<f64>, BlockCache)> {
        let d = self.d;
        let n = x.len() / d;
        debug_assert_eq!(n % group, 0);
        let qkv = self.qkv.forward(p, x, n);
        let (o, weights) = self.attend(&qkv, n, group, valid)?;
        let a = self.proj.forward(p, &o, n);
        let h: Vec<f64> = x.iter().zip(&a).map(|(u, v)| u + v).collect();
        let z = self.ff1.forward(p, &h, n);
        let g: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
        let f = self.ff2.forward(p, &g, n);
        let y = h.iter().zip(&f).map(|(u, v)| u + v).collect();
        let cache = BlockCache {
            n,
            group,
            x: x.to_vec(),
            qkv,
            weights,
            o,
            h,
            z,
            g,
        };
        Ok((y, cache))
    }

    fn attend(&self, qkv: &[f64], n: usize, group: usize, valid: Option<&[bool]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let (d, heads) = (self.d, self.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d3 = 3 * d;
        let mut o = vec![0.0; n * d];
        let mut weights = vec![0.0; (n / group) * heads * group * group];
        let mut scratch = Vec::with_capacity(group);
        for gi in 0..n / group {
            let base = gi * group;
            let gmask = valid.map(|m| &m[base..base + group]);
            for h in 0..heads {
                let wbase = ((gi * heads) + h) * group * group;
                for i in 0..group {
                    let qi = &qkv[(base + i) * d3 + h * dh..][..dh];
                    let row = &mut weights[wbase + i * group..wbase + (i + 1) * group];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &qkv[(base + j) * d3 + d + h * dh..][..dh];
                        *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    masked_softmax(row, gmask, &mut scratch)?;
                    let value = |j: usize| &qkv[(base + j) * d3 + 2 * d + h * dh..][..dh];
                    mix_values(row, value, &mut o[(base + i) * d + h * dh..][..dh], &mut scratch);
                }
            }
        }
        Ok((o, weights))
    }

    /// Attention weights of the last forward pass, `[group][head][query][key]`.
    pub fn weights(cache: &BlockCache) -> &[f64] {
        &cache.weights
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, p: &[f64], grad: &mut [f64], cache: &BlockCache, dy: &[f64]) -> Vec<f64> {
        let n = cache.n;
        let dg = self.ff2.backward(p, grad, &cache.g, n, dy);
        let dz: Vec<f64> = dg.iter().zip(&cache.z).map(|(a, &z)| a * gelu_grad(z)).collect();
        let dh_ffn = self.ff1.backward(p, grad, &cache.h, n, &dz);
        let dh: Vec<f64> = dy.iter().zip(&dh_ffn).map(|(a, b)| a + b).collect();
        let d_o = self.proj.backward(p, grad, &cache.o, n, &dh);
        let dqkv = self.attend_backward(cache, &d_o);
        let dx_attn = self.qkv.backward(p, grad, &cache.x, n, &dqkv);
        dh.iter().zip(&dx_attn).map(|(a, b)| a + b).collect()
    }

    fn attend_backward(&self, cache: &BlockCache, d_o: &[f64]) -> Vec<f64> {
        let (d, heads, group, n) = (self.d, self.heads, cache.group, cache.n);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d3 = 3 * d;
        let qkv = &cache.qkv;
        let mut dqkv = vec![0.0; n * d3];
        let mut da = vec![0.0; group];
        for gi in 0..n / group {
            let base = gi * group;
            for h in 0..heads {
                let wbase = ((gi * heads) + h) * group * group;
                for i in 0..group {
                    let a = &cache.weights[wbase + i * group..wbase + (i + 1) * group];
                    let doi = &d_o[(base + i) * d + h * dh..][..dh];
                    let mut dot = 0.0;
                    for j in 0..group {
                        let vj = &qkv[(base + j) * d3 + 2 * d + h * dh..][..dh];
                        da[j] = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        dot += a[j] * da[j];
                        if a[j] != 0.0 {
                            let dvj = &mut dqkv[(base + j) * d3 + 2 * d + h * dh..][..dh];
                            for (g, x) in dvj.iter_mut().zip(doi) {
                                *g += a[j] * x;
                            }
                        }
                    }
                    for j in 0..group {
                        let ds = a[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            let qic = qkv[(base + i) * d3 + h * dh + c];
                            let kjc = qkv[(base + j) * d3 + d + h * dh + c];
                            dqkv[(base + i) * d3 + h * dh + c] += ds * kjc;
                            dqkv[(base + j) * d3 + d + h * dh + c] += ds * qic;
                        }
                    }
                }
            }
        }
        dqkv
    }
}
