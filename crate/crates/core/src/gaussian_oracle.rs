//! Closed-form Gaussian results used as ground truth for the samplers.
//!
//! The setting is the un-normalized linear-Gaussian channel: a source
//! `x ~ N(0, σ_x² I_N)`, a full-row-rank encoder `A` (`k × N`) and real
//! noise `ẑ = A x + n`, `n ~ N(0, σ_n² I_k)`. No power normalization is
//! applied here. MAP reconstruction shrinks the output distribution;
//! drawing from the exact posterior reproduces the prior marginally.

use thiserror::Error;

use crate::metrics::{w2_gaussian, MetricsError, SampleSet};
use crate::numerics::{
    cholesky, numerical_rank, singular_values, solve_spd, sqrtm_psd, symmetric_eigen, inverse_spd,
    Matrix, NumericsError, SeededRng, DEFAULT_PIVOT_TOL,
};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("covariance is not symmetric positive semidefinite")]
    NotPsd,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Multivariate Gaussian with a PSD covariance and a sampling factor `F`
/// satisfying `F·Fᵀ = cov`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    mean: Vec<f64>,
    cov: Matrix,
    factor: Matrix,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self, OracleError> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(OracleError::DimensionMismatch {
                expected: mean.len(),
                got: cov.rows(),
            });
        }
        let scale = cov.max_abs().max(1.0);
        if cov.max_abs_diff(&cov.transpose()) > 1e-9 * scale {
            return Err(OracleError::NotPsd);
        }
        let cov = cov.symmetrize();
        let (vals, _) = symmetric_eigen(&cov)?;
        if vals.first().is_some_and(|&v| v < -1e-10 * scale) {
            return Err(OracleError::NotPsd);
        }
        let factor = match cholesky(&cov, DEFAULT_PIVOT_TOL) {
            Ok(l) => l,
            Err(_) => sqrtm_psd(&cov)?,
        };
        Ok(Self { mean, cov, factor })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self, OracleError> {
        Self::new(vec![0.0; dim], Matrix::identity(dim).scale(variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Lower-triangular when the covariance is SPD; symmetric square root otherwise.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        let shift = self.factor.matvec(&eps).expect("factor is square");
        self.mean.iter().zip(shift).map(|(m, s)| m + s).collect()
    }
}

/// Linear-Gaussian inverse problem `ẑ = A x + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianProblem {
    a: Matrix,
    sigma_x2: f64,
    sigma_n2: f64,
}

impl LinearGaussianProblem {
    /// `sigma_n2 = +∞` is accepted as the uninformative-observation sentinel.
    pub fn new(a: Matrix, sigma_x2: f64, sigma_n2: f64) -> Result<Self, OracleError> {
        if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
            return Err(OracleError::InvalidProblem("sigma_x2 must be positive"));
        }
        if !(sigma_n2 >= 0.0) {
            return Err(OracleError::InvalidProblem("sigma_n2 must be non-negative"));
        }
        if a.rows() == 0 || a.rows() > a.cols() {
            return Err(OracleError::InvalidProblem("A must be k x N with 0 < k <= N"));
        }
        let s = singular_values(&a);
        if s.len() < a.rows() || s[a.rows() - 1] <= RANK_TOL * s[0] {
            return Err(OracleError::InvalidProblem("A must have full row rank"));
        }
        Ok(Self { a, sigma_x2, sigma_n2 })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn sigma_x2(&self) -> f64 {
        self.sigma_x2
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n2
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn k(&self) -> usize {
        self.a.rows()
    }

    fn check_obs(&self, z_hat: &[f64]) -> Result<(), OracleError> {
        if z_hat.len() != self.k() {
            return Err(OracleError::DimensionMismatch {
                expected: self.k(),
                got: z_hat.len(),
            });
        }
        Ok(())
    }

    /// `Σ_z = σ_x² A Aᵀ + σ_n² I_k`.
    pub fn received_covariance(&self) -> Matrix {
        self.a
            .matmul(&self.a.transpose())
            .expect("shapes agree")
            .scale(self.sigma_x2)
            .add_diag(self.sigma_n2)
            .symmetrize()
    }

    /// Draws `(x, ẑ)` from the joint model.
    pub fn draw(&self, rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
        let sx = self.sigma_x2.sqrt();
        let x: Vec<f64> = (0..self.n()).map(|_| sx * rng.standard_normal()).collect();
        let sn = self.sigma_n2.sqrt();
        let z = self
            .a
            .matvec(&x)
            .expect("shapes agree")
            .into_iter()
            .map(|v| v + sn * rng.standard_normal())
            .collect();
        (x, z)
    }
}

/// Scalar MAP estimate `α·ẑ`, `α = σ_x²/(σ_x² + σ_n²)`.
pub fn scalar_map(z_hat: f64, sigma_x2: f64, sigma_n2: f64) -> f64 {
    sigma_x2 / (sigma_x2 + sigma_n2) * z_hat
}

/// `Var(α ẑ)/σ_x²` with `ẑ ~ N(0, σ_x² + σ_n²)`, evaluated as `α²(σ_x²+σ_n²)/σ_x²`.
pub fn scalar_map_variance_ratio(sigma_x2: f64, sigma_n2: f64) -> f64 {
    let alpha = sigma_x2 / (sigma_x2 + sigma_n2);
    alpha * alpha * (sigma_x2 + sigma_n2) / sigma_x2
}

/// `(AᵀA + (σ_n²/σ_x²) I)⁻¹ Aᵀ ẑ`, an `N × N` solve.
pub fn linear_map_primal(p: &LinearGaussianProblem, z_hat: &[f64]) -> Result<Vec<f64>, OracleError> {
    p.check_obs(z_hat)?;
    if p.sigma_n2.is_infinite() {
        return Ok(vec![0.0; p.n()]);
    }
    let at = p.a.transpose();
    let m = at.matmul(&p.a)?.symmetrize().add_diag(p.sigma_n2 / p.sigma_x2);
    let rhs = at.matvec(z_hat)?;
    solve_spd(&m, &rhs).map_err(|_| OracleError::SingularSystem)
}

/// `σ_x² Aᵀ (σ_x² A Aᵀ + σ_n² I)⁻¹ ẑ`, a `k × k` solve through the push-through identity.
pub fn linear_map_dual(p: &LinearGaussianProblem, z_hat: &[f64]) -> Result<Vec<f64>, OracleError> {
    p.check_obs(z_hat)?;
    if p.sigma_n2.is_infinite() {
        return Ok(vec![0.0; p.n()]);
    }
    let w = solve_spd(&p.received_covariance(), z_hat).map_err(|_| OracleError::SingularSystem)?;
    Ok(p.a.transpose().matvec(&w)?.into_iter().map(|v| v * p.sigma_x2).collect())
}

/// Distribution of the MAP output over `ẑ`: `N(0, σ_x⁴ Aᵀ Σ_z⁻¹ A)`.
pub fn map_output_covariance(p: &LinearGaussianProblem) -> Result<GaussianModel, OracleError> {
    let n = p.n();
    if p.sigma_n2.is_infinite() {
        return GaussianModel::new(vec![0.0; n], Matrix::zeros(n, n));
    }
    let sz_inv = inverse_spd(&p.received_covariance()).map_err(|_| OracleError::SingularSystem)?;
    let s2 = p.sigma_x2 * p.sigma_x2;
    let cov = p.a.transpose().matmul(&sz_inv)?.matmul(&p.a)?.scale(s2).symmetrize();
    GaussianModel::new(vec![0.0; n], cov)
}

/// Numerical rank of the MAP output covariance.
pub fn map_output_rank(p: &LinearGaussianProblem) -> Result<usize, OracleError> {
    Ok(numerical_rank(map_output_covariance(p)?.cov(), RANK_TOL))
}

/// Exact posterior `p(x | ẑ)`: mean equals the MAP point, covariance
/// `(I/σ_x² + AᵀA/σ_n²)⁻¹`.
///
/// With `σ_n² = 0` the posterior is a point mass, which is only defined
/// for square `A`.
pub fn exact_posterior(p: &LinearGaussianProblem, z_hat: &[f64]) -> Result<GaussianModel, OracleError> {
    p.check_obs(z_hat)?;
    let n = p.n();
    if p.sigma_n2.is_infinite() {
        return GaussianModel::isotropic(n, p.sigma_x2);
    }
    if p.sigma_n2 == 0.0 {
        if p.k() != n {
            return Err(OracleError::SingularSystem);
        }
        let mean = linear_map_primal(p, z_hat)?;
        return GaussianModel::new(mean, Matrix::zeros(n, n));
    }
    let mean = linear_map_primal(p, z_hat)?;
    let precision = p
        .a
        .transpose()
        .matmul(&p.a)?
        .scale(1.0 / p.sigma_n2)
        .add_diag(1.0 / p.sigma_x2)
        .symmetrize();
    let cov = inverse_spd(&precision).map_err(|_| OracleError::SingularSystem)?;
    GaussianModel::new(mean, cov)
}

/// Point or draw used to reconstruct `x` from `ẑ` in [`marginal_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    MapPoint,
    PosteriorDraw,
}

/// Draws `n` (source, observation, reconstruction) triples and returns the
/// squared W2 distance between the Gaussian fit of the reconstructions and
/// the prior `N(0, σ_x² I)`.
pub fn marginal_check(
    p: &LinearGaussianProblem,
    how: Reconstruction,
    n: usize,
    rng: &mut SeededRng,
) -> Result<f64, OracleError> {
    let out = reconstruct_many(p, how, n, rng)?;
    let fit = SampleSet::new(out)?.fit_gaussian()?;
    Ok(w2_gaussian(&fit, &GaussianModel::isotropic(p.n(), p.sigma_x2)?)?)
}

/// Reconstructions of `n` fresh prior draws.
pub fn reconstruct_many(
    p: &LinearGaussianProblem,
    how: Reconstruction,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, z) = p.draw(rng);
        out.push(match how {
            Reconstruction::MapPoint => linear_map_primal(p, &z)?,
            Reconstruction::PosteriorDraw => exact_posterior(p, &z)?.sample(rng),
        });
    }
    Ok(out)
}

/// Marginal check for exact posterior sampling.
pub fn posterior_sampling_marginal_check(
    p: &LinearGaussianProblem,
    n: usize,
    rng: &mut SeededRng,
) -> Result<f64, OracleError> {
    marginal_check(p, Reconstruction::PosteriorDraw, n, rng)
}
