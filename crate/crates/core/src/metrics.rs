//! Distribution-level and per-sample quality metrics.
//!
//! The Fréchet distance is computed on raw coordinates: Gaussians are fit to
//! both sample sets and compared with the closed-form 2-Wasserstein
//! distance. Sliced Wasserstein values are *squared* W2, averaged over
//! random projection directions.

use thiserror::Error;

use crate::gaussian_oracle::GaussianModel;
use crate::numerics::{sqrtm_psd, Matrix, NumericsError, SeededRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample set is empty or ragged")]
    BadSampleSet,
    #[error("peak must be positive")]
    InvalidPeak,
    #[error("need at least one projection")]
    NoProjections,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Non-empty list of equally sized sample vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<Vec<f64>>,
    dim: usize,
}

impl SampleSet {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let dim = samples.first().map(Vec::len).ok_or(MetricsError::BadSampleSet)?;
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(MetricsError::BadSampleSet);
        }
        Ok(Self { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mut m = vec![0.0; self.dim];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Matrix {
        let mean = self.mean();
        let d = self.dim;
        let mut c = Matrix::zeros(d, d);
        for s in &self.samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    c.set(i, j, c.get(i, j) + di * (s[j] - mean[j]));
                }
            }
        }
        let denom = (self.samples.len().max(2) - 1) as f64;
        Matrix::from_fn(d, d, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            c.get(a, b) / denom
        })
    }

    /// Gaussian fit (sample mean, unbiased covariance).
    pub fn fit_gaussian(&self) -> Result<GaussianModel, MetricsError> {
        GaussianModel::new(self.mean(), self.covariance())
            .map_err(|_| MetricsError::BadSampleSet)
    }
}

/// Squared 2-Wasserstein distance between Gaussians.
pub fn w2_gaussian(a: &GaussianModel, b: &GaussianModel) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_gap: f64 = a.mean().iter().zip(b.mean()).map(|(x, y)| (x - y) * (x - y)).sum();
    let rb = sqrtm_psd(b.cov())?;
    let inner = rb.matmul(a.cov())?.matmul(&rb)?.symmetrize();
    let cross = sqrtm_psd(&inner)?;
    let t = a.cov().trace() + b.cov().trace() - 2.0 * cross.trace();
    Ok((mean_gap + t).max(0.0))
}

/// Raw-space Fréchet distance: [`w2_gaussian`] between Gaussian fits.
pub fn frechet_distance(a: &SampleSet, b: &SampleSet) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    for s in [a, b] {
        if s.len() < s.dim() + 1 {
            return Err(MetricsError::TooFewSamples {
                needed: s.dim() + 1,
                got: s.len(),
            });
        }
    }
    w2_gaussian(&a.fit_gaussian()?, &b.fit_gaussian()?)
}

/// Squared sliced 2-Wasserstein distance over `n_proj` random directions.
///
/// Unequal set sizes are compared through their empirical quantile
/// functions on a common grid of `max(|a|, |b|)` midpoints.
pub fn sliced_wasserstein(
    a: &SampleSet,
    b: &SampleSet,
    n_proj: usize,
    rng: &mut SeededRng,
) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    if n_proj == 0 {
        return Err(MetricsError::NoProjections);
    }
    let d = a.dim();
    let m = a.len().max(b.len());
    let mut total = 0.0;
    for _ in 0..n_proj {
        let dir = loop {
            let v = rng.normal_vec(d);
            let n = crate::numerics::norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        let pa = sorted_projection(a, &dir);
        let pb = sorted_projection(b, &dir);
        let mut acc = 0.0;
        for j in 0..m {
            let q = (j as f64 + 0.5) / m as f64;
            let diff = quantile(&pa, q) - quantile(&pb, q);
            acc += diff * diff;
        }
        total += acc / m as f64;
    }
    Ok(total / n_proj as f64)
}

fn sorted_projection(s: &SampleSet, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = s.samples().iter().map(|x| crate::numerics::dot(x, dir)).collect();
    p.sort_by(f64::total_cmp);
    p
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64) as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Mean squared error and PSNR in dB; PSNR is `+∞` when the error is zero.
pub fn mse_psnr(x: &[f64], x_hat: &[f64], peak: f64) -> Result<(f64, f64), MetricsError> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(MetricsError::DimensionMismatch(x.len(), x_hat.len()));
    }
    if !(peak > 0.0) {
        return Err(MetricsError::InvalidPeak);
    }
    let mse = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    };
    Ok((mse, psnr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(mean: Vec<f64>, cov: Matrix) -> GaussianModel {
        GaussianModel::new(mean, cov).unwrap()
    }

    fn draw(n: usize, mean: &[f64], sd: f64, rng: &mut SeededRng) -> SampleSet {
        SampleSet::new(
            (0..n)
                .map(|_| mean.iter().map(|m| m + sd * rng.standard_normal()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn w2_closed_forms() {
        let g = gaussian(vec![1.0, 2.0], Matrix::from_diag(&[2.0, 0.5]));
        assert!(w2_gaussian(&g, &g).unwrap().abs() < 1e-12);
        let p0 = gaussian(vec![0.0], Matrix::zeros(1, 1));
        let p3 = gaussian(vec![3.0], Matrix::zeros(1, 1));
        assert!((w2_gaussian(&p0, &p3).unwrap() - 9.0).abs() < 1e-12);
        // 1-D: (m₁−m₂)² + (s₁−s₂)² = (1−2)²
        let a = gaussian(vec![0.0], Matrix::from_diag(&[1.0]));
        let b = gaussian(vec![0.0], Matrix::from_diag(&[4.0]));
        assert!((w2_gaussian(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w2_is_symmetric() {
        let mut rng = SeededRng::new(4, 4);
        for _ in 0..20 {
            let m = |rng: &mut SeededRng| {
                let b = Matrix::from_fn(3, 3, |_, _| rng.standard_normal());
                b.transpose().matmul(&b).unwrap().symmetrize()
            };
            let a = gaussian(rng.normal_vec(3), m(&mut rng));
            let b = gaussian(rng.normal_vec(3), m(&mut rng));
            let ab = w2_gaussian(&a, &b).unwrap();
            let ba = w2_gaussian(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-8);
        }
    }

    #[test]
    fn frechet_self_and_shift() {
        let mut rng = SeededRng::new(10, 0);
        let a = draw(100_000, &[0.0, 0.0], 1.0, &mut rng);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-10);
        let b = draw(100_000, &[0.0, 0.0], 1.0, &mut rng);
        assert!(frechet_distance(&a, &b).unwrap() < 0.02);
        let c = draw(100_000, &[3.0, 0.0], 1.0, &mut rng);
        assert!((frechet_distance(&a, &c).unwrap() - 9.0).abs() < 0.2);
    }

    #[test]
    fn frechet_needs_enough_samples() {
        let a = SampleSet::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            frechet_distance(&a, &a),
            Err(MetricsError::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn sliced_wasserstein_basics() {
        let mut rng = SeededRng::new(1, 0);
        let a = draw(500, &[0.0, 1.0], 1.0, &mut rng);
        assert_eq!(sliced_wasserstein(&a, &a, 16, &mut rng).unwrap(), 0.0);
        let p = SampleSet::new(vec![vec![0.0]]).unwrap();
        let q = SampleSet::new(vec![vec![2.0]]).unwrap();
        assert!((sliced_wasserstein(&p, &q, 4, &mut rng).unwrap() - 4.0).abs() < 1e-12);
        assert!(sliced_wasserstein(&p, &q, 0, &mut rng).is_err());
    }

    #[test]
    fn sliced_wasserstein_sees_bimodality_missed_by_frechet() {
        // A two-mode mixture and a Gaussian with the same first two moments:
        // the Fréchet distance cannot separate them, sliced W2 can.
        let mut rng = SeededRng::new(12, 0);
        let n = 20_000;
        let mix = SampleSet::new(
            (0..n)
                .map(|i| {
                    let c = if i % 2 == 0 { -2.0 } else { 2.0 };
                    vec![c + 0.3 * rng.standard_normal(), rng.standard_normal()]
                })
                .collect(),
        )
        .unwrap();
        let fit = mix.fit_gaussian().unwrap();
        let sd0 = fit.cov().get(0, 0).sqrt();
        let gauss = SampleSet::new(
            (0..n)
                .map(|_| vec![sd0 * rng.standard_normal(), rng.standard_normal()])
                .collect(),
        )
        .unwrap();
        let fd = frechet_distance(&mix, &gauss).unwrap();
        let mut proj_rng = SeededRng::new(99, 0);
        let sw = sliced_wasserstein(&mix, &gauss, 64, &mut proj_rng).unwrap();
        assert!(fd < 0.02, "fd = {fd}");
        assert!(sw > 10.0 * fd, "sw = {sw}, fd = {fd}");
        // golden value for this seed
        assert!((sw - 0.284587105509083).abs() < 1e-9, "sw = {sw}");
    }

    #[test]
    fn mse_psnr_cases() {
        let (m, p) = mse_psnr(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(m, 0.0);
        assert!(p.is_infinite() && p > 0.0);
        let (m, p) = mse_psnr(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!((m, p), (1.0, 0.0));
        let (m, p) = mse_psnr(&[0.0, 0.0], &[0.1, 0.3], 1.0).unwrap();
        assert!((m - 0.05).abs() < 1e-15);
        assert!((p - 13.010_299_956_639_812).abs() < 1e-9);
        assert!(mse_psnr(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(mse_psnr(&[0.0], &[0.0], 0.0).is_err());
    }
}
