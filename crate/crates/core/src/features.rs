use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Node feature matrix `X` (n × d), stored column-major since every column
/// is propagated on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    rows: usize,
    columns: Vec<Vec<f64>>,
    seed: Option<u64>,
}

impl FeatureStore {
    pub fn from_matrix(m: &Matrix) -> Self {
        FeatureStore {
            rows: m.rows(),
            columns: (0..m.cols()).map(|j| m.column(j)).collect(),
            seed: None,
        }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::LengthMismatch {
                expected: rows,
                actual: c.len(),
            });
        }
        Ok(FeatureStore {
            rows,
            columns,
            seed: None,
        })
    }

    /// Seeded uniform(-0.5, 0.5) features, drawn row by row so that a larger
    /// `rows` extends a smaller draw with the same seed.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = vec![Vec::with_capacity(rows); dim];
        for _ in 0..rows {
            for c in columns.iter_mut() {
                c.push(rng.gen_range(-0.5..0.5));
            }
        }
        FeatureStore {
            rows,
            columns,
            seed: Some(seed),
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Seed of a random draw, if this store came from one.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.columns)
    }

    /// Copy with columns reordered: column `k` of the result is `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        FeatureStore {
            rows: self.rows,
            columns: perm.iter().map(|&j| self.columns[j].clone()).collect(),
            seed: self.seed,
        }
    }

    pub fn require_rows(&self, n: usize) -> Result<()> {
        if n > self.rows {
            Err(Error::MissingFeatureRow {
                node: crate::graph::NodeId::from_index(self.rows),
                rows: self.rows,
            })
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_rows_are_prefix_stable() {
        let a = FeatureStore::random(5, 3, 42);
        let b = FeatureStore::random(8, 3, 42);
        for i in 0..5 {
            assert_eq!(a.row(i), b.row(i));
        }
        assert!(b.columns().iter().flatten().all(|v| (-0.5..0.5).contains(v)));
        assert_eq!(b.seed(), Some(42));
    }

    #[test]
    fn matrix_round_trip() {
        let m = Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = FeatureStore::from_matrix(&m);
        assert_eq!(f.column(1), &[2.0, 5.0]);
        assert_eq!(f.to_matrix(), m);
        assert!(FeatureStore::from_columns(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
