use serde::{Deserialize, Serialize};

use super::linalg::order_free_sum;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub output: Matrix,
    /// Query-by-key attention weights.
    pub weights: Matrix,
}

/// Softmax over `scores` restricted to keys where `valid` is true; invalid
/// keys get weight exactly zero. Key order does not affect the result.
pub(crate) fn masked_softmax(scores: &mut [f64], valid: Option<&[bool]>, scratch: &mut Vec<f64>) -> Result<()> {
    let ok = |j: usize| valid.is_none_or(|v| v[j]);
    let mut m = f64::NEG_INFINITY;
    for (j, &s) in scores.iter().enumerate() {
        if ok(j) {
            m = m.max(s);
        }
    }
    if m == f64::NEG_INFINITY {
        return Err(Error::invalid("every key is masked for some query"));
    }
    for (j, s) in scores.iter_mut().enumerate() {
        *s = if ok(j) { (*s - m).exp() } else { 0.0 };
    }
    scratch.clear();
    scratch.extend_from_slice(scores);
    let total = order_free_sum(scratch);
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(())
}

/// `out[c] = sum_j w[j] * value(j)[c]` with every sum in sorted term order.
pub(crate) fn mix_values<'a>(w: &[f64], value: impl Fn(usize) -> &'a [f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    for (c, o) in out.iter_mut().enumerate() {
        scratch.clear();
        scratch.extend(w.iter().enumerate().filter(|(_, &wj)| wj != 0.0).map(|(j, &wj)| wj * value(j)[c]));
        *o = order_free_sum(scratch);
    }
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V`, with keys
/// flagged false in `key_valid` excluded.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, key_valid: Option<&[bool]>) -> Result<AttentionOutput> {
    if q.cols != k.cols || k.rows != v.rows {
        return Err(Error::invalid("attention operands have inconsistent shapes"));
    }
    if key_valid.is_some_and(|m| m.len() != k.rows) {
        return Err(Error::invalid("key mask length differs from key count"));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut weights = Matrix::zeros(q.rows, k.rows);
    let mut output = Matrix::zeros(q.rows, v.cols);
    let mut scratch = Vec::new();
    for i in 0..q.rows {
        let qi = q.row(i);
        let w = &mut weights.data[i * k.rows..(i + 1) * k.rows];
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = scale * qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>();
        }
        masked_softmax(w, key_valid, &mut scratch)?;
        mix_values(w, |j| v.row(j), &mut output.data[i * v.cols..(i + 1) * v.cols], &mut scratch);
    }
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_its_value() {
        let q = Matrix::new(2, 3, vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        let k = Matrix::new(1, 3, vec![0.5, 0.1, -0.2]).unwrap();
        let v = Matrix::new(1, 2, vec![4.0, -7.0]).unwrap();
        let out = attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.weights.data, vec![1.0, 1.0]);
        assert_eq!(out.output.row(1), &[4.0, -7.0]);
    }

    #[test]
    fn zero_logits_average_the_values() {
        let q = Matrix::zeros(1, 2);
        let k = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = Matrix::new(3, 1, vec![1.0, 2.0, 6.0]).unwrap();
        let out = attention(&q, &k, &v, None).unwrap();
        assert!((out.output.data[0] - 3.0).abs() < 1e-12);
        for w in &out.weights.data {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fully_masked_keys_are_an_error() {
        let q = Matrix::zeros(1, 2);
        let k = Matrix::zeros(2, 2);
        let v = Matrix::zeros(2, 2);
        assert!(attention(&q, &k, &v, Some(&[false, false])).is_err());
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let q = Matrix::new(1, 1, vec![1.0]).unwrap();
        let k = Matrix::new(3, 1, vec![100.0, 0.0, -1.0]).unwrap();
        let v = Matrix::new(3, 1, vec![9.0, 1.0, 2.0]).unwrap();
        let out = attention(&q, &k, &v, Some(&[false, true, true])).unwrap();
        assert_eq!(out.weights.data[0], 0.0);
        let s: f64 = out.weights.data.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
