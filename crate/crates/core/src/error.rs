use thiserror::Error;

/// Errors raised by estimation, simulation and inference routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty kernel neighborhood at z = {z:?}")]
    EmptyNeighborhood { z: Vec<f64> },

    #[error("basis function `{name}` is not differentiable at z = {z:?}")]
    NonDifferentiable { name: String, z: Vec<f64> },

    #[error("predictor {value} is saturated at the boundary of the transform range")]
    Saturated { value: f64 },

    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),

    #[error("rank-deficient design: null directions {null_directions:?}")]
    RankDeficient { null_directions: Vec<Vec<f64>> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
