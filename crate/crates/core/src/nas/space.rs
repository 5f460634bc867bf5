use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, DIMENSION_NAMES};
use crate::error::{Error, Result};

/// The architecture search space: for every [`ArchConfig`] dimension, the
/// allowed value indices into that dimension's full domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    allowed: Vec<Vec<usize>>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::full()
    }
}

impl SearchSpace {
    pub fn full() -> Self {
        Self {
            allowed: ArchConfig::dimensions().iter().map(|d| (0..d.values.len()).collect()).collect(),
        }
    }

    /// Limits dimension `name` to the given value labels.
    pub fn restrict(mut self, name: &str, labels: &[&str]) -> Result<Self> {
        let dims = ArchConfig::dimensions();
        let d = dims
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::Search(format!("unknown dimension {name:?}; known: {}", DIMENSION_NAMES.join(", "))))?;
        let mut ix = Vec::new();
        for l in labels {
            let v = dims[d]
                .values
                .iter()
                .position(|x| x.eq_ignore_ascii_case(l.trim()))
                .ok_or_else(|| Error::Search(format!("{name}: {l:?} is not in {:?}", dims[d].values)))?;
            if !ix.contains(&v) {
                ix.push(v);
            }
        }
        if ix.is_empty() {
            return Err(Error::Search(format!("{name}: empty domain")));
        }
        ix.sort_unstable();
        self.allowed[d] = ix;
        Ok(self)
    }

    pub fn num_dimensions(&self) -> usize {
        self.allowed.len()
    }

    /// Allowed value indices of dimension `d`.
    pub fn domain(&self, d: usize) -> &[usize] {
        &self.allowed[d]
    }

    pub fn cardinality(&self) -> u64 {
        self.allowed.iter().map(|a| a.len() as u64).product()
    }

    pub fn contains(&self, c: &ArchConfig) -> bool {
        c.indices().iter().zip(&self.allowed).all(|(i, a)| a.contains(i))
    }

    /// Uniform over the product space.
    pub fn sample(&self, rng: &mut impl Rng) -> ArchConfig {
        let ix: Vec<usize> = self.allowed.iter().map(|a| a[rng.random_range(0..a.len())]).collect();
        ArchConfig::from_indices(&ix).expect("allowed indices are in range")
    }

    /// Every configuration, in lexicographic index order.
    pub fn enumerate(&self) -> impl Iterator<Item = ArchConfig> + '_ {
        let total = self.cardinality();
        (0..total).map(move |mut k| {
            let mut ix = vec![0; self.allowed.len()];
            for d in (0..self.allowed.len()).rev() {
                let n = self.allowed[d].len() as u64;
                ix[d] = self.allowed[d][(k % n) as usize];
                k /= n;
            }
            ArchConfig::from_indices(&ix).expect("allowed indices are in range")
        })
    }
}

/// Width of the one-hot encoding over the full domains.
pub fn encoding_width() -> usize {
    ArchConfig::dimensions().iter().map(|d| d.values.len()).sum()
}

/// One-hot encoding over the full domains, dimensions concatenated in
/// canonical order.
pub fn one_hot(c: &ArchConfig) -> Vec<f64> {
    let dims = ArchConfig::dimensions();
    let mut out = vec![0.0; encoding_width()];
    let mut base = 0;
    for (d, &i) in dims.iter().zip(c.indices().iter()) {
        out[base + i] = 1.0;
        base += d.values.len();
    }
    out
}
