//! Dense linear algebra, seeded sampling and reverse-mode differentiation.

mod linalg;
mod matrix;
mod mlp;
mod optim;
mod rng;
pub mod tape;

use thiserror::Error;

pub use linalg::{
    cholesky, inverse_spd, numerical_rank, singular_values, solve_lower, solve_lower_transposed,
    solve_spd, solve_spd_matrix, sqrtm_psd, symmetric_eigen, DEFAULT_PIVOT_TOL,
};
pub use matrix::{dot, norm, norm_sq, Matrix};
pub use mlp::{BoundMlp, Mlp, MlpError, TrainConfig, TrainReport};
pub use optim::{Optimizer, OptimizerState};
pub use rng::SeededRng;
pub use tape::{gradient, Gradients, RowFunction, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("primitive `{0}` has no reverse-mode rule")]
    UnsupportedPrimitive(&'static str),
    #[error("forward pass produced a non-finite value")]
    NonFiniteForward,
    #[error("backward pass requires a 1x1 output")]
    NotScalar,
}

/// `mean + cov_chol · ε` with `ε ~ N(0, I)`.
pub fn gaussian_draw(
    mean: &[f64],
    cov_chol: &Matrix,
    rng: &mut SeededRng,
) -> Result<Vec<f64>, NumericsError> {
    if cov_chol.rows() != mean.len() || !cov_chol.is_square() {
        return Err(NumericsError::DimensionMismatch {
            expected: mean.len(),
            got: cov_chol.rows(),
        });
    }
    let eps = rng.normal_vec(mean.len());
    let shift = cov_chol.matvec(&eps)?;
    Ok(mean.iter().zip(shift).map(|(m, s)| m + s).collect())
}
