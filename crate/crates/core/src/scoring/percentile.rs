use crate::error::{Error, Result};

/// Position of `value` within a reference population, in `[0, 1]`.
///
/// Uses the midpoint rank `(below + (equal - 1) / 2) / (n - 1)`, clamped:
/// the reference minimum maps to 0, its maximum to 1 and the median of an
/// odd-sized reference to 0.5. Values outside the reference clamp to the
/// ends. A one-element reference maps below, equal and above to 0, 0.5 and
/// 1. `reference` must be sorted ascending.
pub fn percentile_transform(value: f64, reference: &[f64]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("empty percentile reference"));
    }
    if value.is_nan() {
        return Err(Error::Numeric("percentile of NaN".into()));
    }
    let below = reference.partition_point(|&r| r < value);
    let upto = reference.partition_point(|&r| r <= value);
    let equal = upto - below;
    let n = reference.len();
    if n == 1 {
        return Ok(match (below, equal) {
            (1, _) => 1.0,
            (_, 1) => 0.5,
            _ => 0.0,
        });
    }
    let rank = below as f64 + 0.5 * (equal as f64 - 1.0);
    Ok((rank / (n - 1) as f64).clamp(0.0, 1.0))
}

/// Frozen, sorted reference population.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedReference(Vec<f64>);

impl SortedReference {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty percentile reference"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN in percentile reference".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(SortedReference(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn transform(&self, value: f64) -> Result<f64> {
        percentile_transform(value, &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_cases() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_transform(0.0, &r).unwrap(), 0.0);
        assert_eq!(percentile_transform(9.0, &r).unwrap(), 1.0);
        assert_eq!(percentile_transform(3.0, &r).unwrap(), 0.5);
        assert_eq!(percentile_transform(1.0, &r).unwrap(), 0.0);
        assert_eq!(percentile_transform(5.0, &r).unwrap(), 1.0);
        assert!(percentile_transform(1.0, &[]).is_err());
    }

    #[test]
    fn single_reference() {
        assert_eq!(percentile_transform(0.0, &[1.0]).unwrap(), 0.0);
        assert_eq!(percentile_transform(1.0, &[1.0]).unwrap(), 0.5);
        assert_eq!(percentile_transform(2.0, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn ties_take_the_midpoint() {
        let r = [1.0, 2.0, 2.0, 2.0, 3.0];
        assert_eq!(percentile_transform(2.0, &r).unwrap(), 0.5);
    }
}
