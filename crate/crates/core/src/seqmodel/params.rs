use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::gemm;

/// Location of one named parameter tensor inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn row(&self, r: usize) -> Range<usize> {
        let s = self.offset + r * self.cols;
        s..s + self.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub slot: Slot,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    Normal(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
}

/// Flat parameter vector with a named layout; gradients share the layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    pub values: Vec<f64>,
    pub groups: Vec<ParamGroup>,
}

impl Params {
    pub fn alloc<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init, rng: &mut R) -> Slot {
        let slot = Slot {
            offset: self.values.len(),
            rows,
            cols,
        };
        let n = rows * cols;
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, n)),
            Init::Constant(c) => self.values.extend(std::iter::repeat_n(c, n)),
            Init::Normal(s) => {
                let d = Normal::new(0.0, s).expect("finite std");
                self.values.extend((0..n).map(|_| d.sample(rng)));
            }
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                self.values.extend((0..n).map(|_| rng.random_range(-a..a)));
            }
        }
        self.groups.push(ParamGroup { name: name.into(), slot });
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: Slot) -> &[f64] {
        &self.values[slot.range()]
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: Slot,
    pub b: Slot,
}

impl Linear {
    pub fn new<R: Rng>(p: &mut Params, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            w: p.alloc(format!("{name}.weight"), d_in, d_out, Init::Xavier, rng),
            b: p.alloc(format!("{name}.bias"), 1, d_out, Init::Zeros, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows
    }

    pub fn d_out(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, p: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let d_out = self.d_out();
        let b = &p[self.b.range()];
        let mut y = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        gemm(n, self.d_in(), d_out, x, false, &p[self.w.range()], false, 1.0, &mut y);
        y
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&self, p: &[f64], grad: &mut [f64], x: &[f64], n: usize, dy: &[f64]) -> Vec<f64> {
        self.accumulate(grad, x, n, dy);
        let mut dx = vec![0.0; n * self.d_in()];
        gemm(n, self.d_out(), self.d_in(), dy, false, &p[self.w.range()], true, 0.0, &mut dx);
        dx
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, grad: &mut [f64], x: &[f64], n: usize, dy: &[f64]) {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        gemm(d_in, n, d_out, x, true, dy, false, 1.0, &mut grad[self.w.range()]);
        let db = &mut grad[self.b.range()];
        for row in dy.chunks_exact(d_out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
}
