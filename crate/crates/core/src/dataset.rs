//! Row-major numeric design matrix with binary labels.

use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(n_features: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Dataset> {
        if n_features == 0 {
            return Err(Error::Contract("dataset needs at least one feature".into()));
        }
        if values.len() != n_features * labels.len() {
            return Err(Error::Contract(format!(
                "{} values do not fill {} rows of {} features",
                values.len(),
                labels.len(),
                n_features
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        Ok(Dataset {
            n_features,
            values,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Dataset> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() || rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::Contract("ragged rows or label count mismatch".into()));
        }
        Dataset::new(n_features, rows.concat(), labels)
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Dataset> {
        let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.x.clone()).collect();
        if rows.is_empty() {
            return Err(Error::EmptyInput("no feature vectors"));
        }
        Dataset::from_rows(&rows, vectors.iter().map(|v| v.y).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features + feature]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_features)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_attack(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Applies `f(feature, value)` to every cell.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Dataset {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % self.n_features, v))
            .collect();
        Dataset {
            n_features: self.n_features,
            values,
            labels: self.labels.clone(),
        }
    }
}

pub mod seed {
    //! Deterministic seed derivation. Every random stream in the crate is a
    //! ChaCha8 generator seeded from a master seed mixed with coordinates
    //! (tree index, repetition, grid cell, ...).

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn derive(master: u64, coords: &[u64]) -> u64 {
        coords
            .iter()
            .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}
