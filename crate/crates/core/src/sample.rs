use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation `(x1, x2, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x1: f64,
    pub x2: f64,
    pub z: Vec<f64>,
}

/// An immutable sample of `n` observations sharing the covariate dimension `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    rows: Vec<Observation>,
    dim: usize,
}

impl Sample {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let dim = match rows.first() {
            Some(r) => r.z.len(),
            None => return Err(Error::Degenerate("empty sample".into())),
        };
        if dim == 0 {
            return Err(Error::Argument("covariate dimension must be at least 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.z.len() != dim {
                return Err(Error::Argument(format!(
                    "row {i} has covariate dimension {} instead of {dim}",
                    r.z.len()
                )));
            }
            if r.x1.is_nan() || r.x2.is_nan() || r.z.iter().any(|v| v.is_nan()) {
                return Err(Error::Argument(format!("row {i} contains NaN")));
            }
        }
        Ok(Sample { rows, dim })
    }

    /// Builds a sample from parallel columns; `z[i]` is the covariate vector of row `i`.
    pub fn from_columns(x1: &[f64], x2: &[f64], z: &[Vec<f64>]) -> Result<Self> {
        if x1.len() != x2.len() || x1.len() != z.len() {
            return Err(Error::Argument("column lengths differ".into()));
        }
        let rows = x1
            .iter()
            .zip(x2)
            .zip(z)
            .map(|((&a, &b), zz)| Observation {
                x1: a,
                x2: b,
                z: zz.clone(),
            })
            .collect();
        Sample::new(rows)
    }

    /// Convenience for the univariate-covariate case.
    pub fn from_scalar_z(x1: &[f64], x2: &[f64], z: &[f64]) -> Result<Self> {
        let z: Vec<Vec<f64>> = z.iter().map(|&v| vec![v]).collect();
        Sample::from_columns(x1, x2, &z)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Observation {
        &self.rows[i]
    }

    /// Sub-sample made of the given row indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Sample> {
        Sample::new(idx.iter().map(|&i| self.rows[i].clone()).collect())
    }

    /// Values of covariate coordinate `k` across rows.
    pub fn z_column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.z[k]).collect()
    }

    pub fn require_at_least(&self, n: usize) -> Result<()> {
        if self.len() < n {
            return Err(Error::Degenerate(format!(
                "need at least {n} observations, got {}",
                self.len()
            )));
        }
        Ok(())
    }
}
