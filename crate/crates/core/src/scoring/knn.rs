use crate::error::{Error, Result};

/// Exact nearest-neighbour index over training-event embeddings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainIndex {
    dim: usize,
    rows: Vec<f64>,
    ids: Vec<u64>,
}

impl TrainIndex {
    pub fn new(dim: usize) -> Self {
        TrainIndex {
            dim,
            rows: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u64, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::invalid(format!(
                "embedding has {} entries, index dimension is {}",
                embedding.len(),
                self.dim
            )));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        self.rows.extend_from_slice(embedding);
        self.ids.push(id);
        Ok(())
    }

    pub fn row(&self, i: usize) -> (u64, &[f64]) {
        (self.ids[i], &self.rows[i * self.dim..(i + 1) * self.dim])
    }

    /// The `k` nearest rows as `(distance, id)`, closest first, ties broken
    /// by id.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<(f64, u64)>> {
        if query.len() != self.dim {
            return Err(Error::invalid("query dimension differs from the index"));
        }
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!("k = {k} but the index holds {} rows", self.len())));
        }
        let mut d: Vec<(f64, u64)> = self
            .rows
            .chunks_exact(self.dim)
            .zip(&self.ids)
            .map(|(r, &id)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), id))
            .collect();
        let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        Ok(d.into_iter().map(|(s, id)| (s.sqrt(), id)).collect())
    }

    /// Mean Euclidean distance to the `k` nearest rows.
    pub fn knn_distance(&self, query: &[f64], k: usize) -> Result<f64> {
        let near = self.nearest(query, k)?;
        Ok(near.iter().map(|(d, _)| d).sum::<f64>() / k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_cases() {
        let mut idx = TrainIndex::new(2);
        idx.push(0, &[0.0, 0.0]).unwrap();
        idx.push(1, &[3.0, 4.0]).unwrap();
        assert_eq!(idx.knn_distance(&[0.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(idx.knn_distance(&[3.0, 0.0], 1).unwrap(), 3.0);
        assert!(idx.knn_distance(&[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn duplicates_at_the_query_give_zero() {
        let mut idx = TrainIndex::new(3);
        for i in 0..5 {
            idx.push(i, &[1.0, 2.0, 3.0]).unwrap();
        }
        idx.push(9, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(idx.knn_distance(&[1.0, 2.0, 3.0], 5).unwrap(), 0.0);
    }

    #[test]
    fn ties_resolve_by_id() {
        let mut idx = TrainIndex::new(1);
        for id in [7, 3, 5] {
            idx.push(id, &[1.0]).unwrap();
        }
        let near = idx.nearest(&[0.0], 2).unwrap();
        assert_eq!(near, vec![(1.0, 3), (1.0, 5)]);
    }
}
