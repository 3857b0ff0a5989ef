use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{cmp_f64, mae};
use crate::error::{Error, Result};

/// Indices kept after dropping the `reject_fraction` most uncertain
/// samples. Ties in uncertainty are ordered by a seeded shuffle.
pub fn rejection_keep(uncertainty: &[f64], reject_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&reject_fraction) {
        return Err(Error::invalid("reject_fraction must lie in [0, 1)"));
    }
    if uncertainty.iter().any(|u| u.is_nan()) {
        return Err(Error::Numeric("NaN uncertainty".into()));
    }
    let n = uncertainty.len();
    let drop = (reject_fraction * n as f64 + 1e-9).floor() as usize;
    if drop >= n {
        return Err(Error::invalid("every sample would be rejected"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| cmp_f64(&uncertainty[a], &uncertainty[b]));
    order.truncate(n - drop);
    order.sort_unstable();
    Ok(order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub reject_fraction: f64,
    pub kept: usize,
    pub mae: f64,
}

/// MAE of `errors` after rejecting the most uncertain fraction.
pub fn rejection_eval(errors: &[f64], uncertainty: &[f64], reject_fraction: f64, seed: u64) -> Result<RejectionPoint> {
    if errors.len() != uncertainty.len() {
        return Err(Error::invalid("errors and uncertainties differ in length"));
    }
    let keep = rejection_keep(uncertainty, reject_fraction, seed)?;
    let kept: Vec<f64> = keep.iter().map(|&i| errors[i]).collect();
    Ok(RejectionPoint {
        reject_fraction,
        kept: kept.len(),
        mae: mae(&kept)?,
    })
}

/// Rejection sweep over the given fractions.
pub fn rejection_curve(errors: &[f64], uncertainty: &[f64], fractions: &[f64], seed: u64) -> Result<Vec<RejectionPoint>> {
    fractions
        .iter()
        .map(|&f| rejection_eval(errors, uncertainty, f, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fraction_keeps_everything() {
        let e = [1.0, 2.0, 3.0];
        let p = rejection_eval(&e, &[0.5, 0.1, 0.9], 0.0, 1).unwrap();
        assert_eq!(p.kept, 3);
        assert_eq!(p.mae, 2.0);
    }

    #[test]
    fn most_uncertain_go_first() {
        let e = [1.0, 2.0, 10.0, 3.0];
        let u = [0.1, 0.2, 0.9, 0.3];
        let p = rejection_eval(&e, &u, 0.25, 1).unwrap();
        assert_eq!(p.mae, 2.0);
    }

    #[test]
    fn equal_uncertainty_rejects_a_seeded_subset() {
        let u = vec![1.0; 10];
        let a = rejection_keep(&u, 0.3, 4).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, rejection_keep(&u, 0.3, 4).unwrap());
    }

    #[test]
    fn rejecting_all_is_an_error() {
        assert!(rejection_keep(&[1.0], 0.5, 0).is_ok());
        assert!(rejection_keep(&[1.0, 2.0], 0.99, 0).is_ok());
        assert!(rejection_keep(&[1.0], 1.0, 0).is_err());
    }
}
