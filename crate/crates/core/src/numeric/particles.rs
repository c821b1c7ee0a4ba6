use serde::{Deserialize, Serialize};

use super::tensor::{sq_dist, Tensor2};
use crate::error::{Error, Result};

/// `M` flattened parameter vectors, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    values: Tensor2,
}

impl ParticleSet {
    pub fn new(values: Tensor2) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::invalid(
                "ParticleSet::new",
                format!("need m >= 1 and dim >= 1, got {}x{}", values.rows(), values.cols()),
            ));
        }
        if !values.is_finite() {
            return Err(Error::invalid("ParticleSet::new", "non-finite particle entry"));
        }
        Ok(Self { values })
    }

    /// Rejects ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor2::from_rows(rows)?)
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(Tensor2::from_vec(xs.len(), 1, xs.to_vec())?)
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor2 {
        &mut self.values
    }

    pub fn into_values(self) -> Tensor2 {
        self.values
    }
}

/// Symmetric `M×M` Euclidean distance matrix with a zero diagonal.
pub fn pairwise_distances(particles: &ParticleSet) -> Tensor2 {
    let m = particles.m();
    let mut out = Tensor2::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = sq_dist(particles.particle(i), particles.particle(j)).sqrt();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}
