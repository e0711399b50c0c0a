use std::f64::consts::PI;
use std::sync::Arc;

use super::{DiffusionError, NoiseSchedule};
use crate::checkpoint::Checkpoint;
use crate::gaussian_oracle::GaussianModel;
use crate::numerics::{
    cholesky, inverse_spd, Matrix, Mlp, RowFunction, SeededRng, Tape, Var, DEFAULT_PIVOT_TOL,
};

/// Sinusoid frequencies in the step embedding; the embedding has twice as many features.
pub const EMBED_FREQUENCIES: usize = 8;

/// `[sin(2^f π τ), cos(2^f π τ)]` for `f = 0..8`, `τ = i/T`.
pub fn time_embedding(i: usize, steps: usize) -> Vec<f64> {
    let tau = i as f64 / steps as f64;
    let mut out = Vec::with_capacity(2 * EMBED_FREQUENCIES);
    for f in 0..EMBED_FREQUENCIES {
        out.push(((1u32 << f) as f64 * PI * tau).sin());
    }
    for f in 0..EMBED_FREQUENCIES {
        out.push(((1u32 << f) as f64 * PI * tau).cos());
    }
    out
}

/// Gaussian mixture prior with per-component covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Matrix>,
    chols: Vec<Matrix>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Matrix>) -> Result<Self, DiffusionError> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(DiffusionError::InvalidPrior("component counts differ"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(DiffusionError::InvalidPrior("weights must be positive"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(DiffusionError::InvalidPrior("weights must sum to 1"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) || covs.iter().any(|c| c.shape() != (d, d)) {
            return Err(DiffusionError::InvalidPrior("inconsistent dimensions"));
        }
        let chols = covs
            .iter()
            .map(|c| cholesky(c, DEFAULT_PIVOT_TOL).map_err(|_| DiffusionError::InvalidPrior("covariance not SPD")))
            .collect::<Result<_, _>>()?;
        Ok(Self { weights, means, covs, chols })
    }

    /// Shared isotropic covariance `std² I`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Result<Self, DiffusionError> {
        let d = means.first().map_or(0, Vec::len);
        let covs = vec![Matrix::identity(d).scale(std * std); means.len()];
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[Matrix] {
        &self.covs
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let eps = rng.normal_vec(self.dim());
        let shift = self.chols[k].matvec(&eps).expect("square factor");
        self.means[k].iter().zip(shift).map(|(m, s)| m + s).collect()
    }

    /// The marginal at step `i`: means `√ᾱ μ_k`, covariances `ᾱ Σ_k + (1−ᾱ) I`.
    fn marginal(&self, alpha_bar: f64) -> GmmMarginalScore {
        let comps = (0..self.components())
            .map(|k| {
                let c = self.covs[k].scale(alpha_bar).add_diag(1.0 - alpha_bar);
                let l = cholesky(&c, DEFAULT_PIVOT_TOL).expect("marginal covariance is SPD");
                let logdet: f64 = (0..l.rows()).map(|j| 2.0 * l.get(j, j).ln()).sum();
                MarginalComponent {
                    log_norm: self.weights[k].ln() - 0.5 * logdet,
                    mean: self.means[k].iter().map(|m| alpha_bar.sqrt() * m).collect(),
                    precision: inverse_spd(&c).expect("marginal covariance is SPD"),
                }
            })
            .collect();
        GmmMarginalScore { comps }
    }
}

struct MarginalComponent {
    log_norm: f64,
    mean: Vec<f64>,
    precision: Matrix,
}

/// `∇ log Σ_k w_k N(x; m_k, C_k)` with log-sum-exp responsibilities.
struct GmmMarginalScore {
    comps: Vec<MarginalComponent>,
}

impl GmmMarginalScore {
    /// Responsibilities and component scores `s_k = −P_k (x − m_k)`.
    fn parts(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut logits = Vec::with_capacity(self.comps.len());
        let mut scores = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            let r: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
            let pr = c.precision.matvec(&r).expect("dims checked");
            let quad: f64 = r.iter().zip(&pr).map(|(a, b)| a * b).sum();
            logits.push(c.log_norm - 0.5 * quad);
            scores.push(pr.into_iter().map(|v| -v).collect());
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        (resp, scores)
    }
}

impl RowFunction for GmmMarginalScore {
    fn name(&self) -> &'static str {
        "gmm_score"
    }

    fn output_dim(&self, input_dim: usize) -> usize {
        input_dim
    }

    fn eval(&self, input: &[f64], output: &mut [f64]) {
        let (resp, scores) = self.parts(input);
        output.iter_mut().for_each(|o| *o = 0.0);
        for (r, s) in resp.iter().zip(&scores) {
            for (o, v) in output.iter_mut().zip(s) {
                *o += r * v;
            }
        }
    }

    // J = Σ r_k (−P_k) + Σ r_k s_k s_kᵀ − s sᵀ, symmetric.
    fn vjp(&self, input: &[f64], cot: &[f64], grad: &mut [f64]) -> bool {
        let (resp, scores) = self.parts(input);
        let d = input.len();
        let mut s = vec![0.0; d];
        for (r, sk) in resp.iter().zip(&scores) {
            for j in 0..d {
                s[j] += r * sk[j];
            }
        }
        let s_dot: f64 = s.iter().zip(cot).map(|(a, b)| a * b).sum();
        for ((r, sk), c) in resp.iter().zip(&scores).zip(&self.comps) {
            let pc = c.precision.matvec(cot).expect("dims checked");
            let sk_dot: f64 = sk.iter().zip(cot).map(|(a, b)| a * b).sum();
            for j in 0..d {
                grad[j] += r * (sk[j] * sk_dot - pc[j]);
            }
        }
        for j in 0..d {
            grad[j] -= s[j] * s_dot;
        }
        true
    }
}

/// Noise-prediction network `ε_θ([x_t, emb(i/T)])`; the score is `−ε_θ/√(1−ᾱ_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    mlp: Mlp,
    steps: usize,
}

impl ScoreNet {
    /// Widths `[dim + 16, 64, 64, dim]`.
    pub fn new(dim: usize, steps: usize, rng: &mut SeededRng) -> Result<Self, DiffusionError> {
        Self::with_hidden(dim, steps, &[64, 64], rng)
    }

    pub fn with_hidden(dim: usize, steps: usize, hidden: &[usize], rng: &mut SeededRng) -> Result<Self, DiffusionError> {
        let mut widths = vec![dim + 2 * EMBED_FREQUENCIES];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(Self {
            mlp: Mlp::random(&widths, rng)?,
            steps,
        })
    }

    pub fn from_mlp(mlp: Mlp, steps: usize) -> Result<Self, DiffusionError> {
        if mlp.input_dim() != mlp.output_dim() + 2 * EMBED_FREQUENCIES {
            return Err(DiffusionError::DimensionMismatch {
                expected: mlp.output_dim() + 2 * EMBED_FREQUENCIES,
                got: mlp.input_dim(),
            });
        }
        Ok(Self { mlp, steps })
    }

    pub fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Step count the embedding is normalized by.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Records `ε_θ` for rows of `x`, row `r` at step `steps[r]`, through the given parameters.
    pub fn record_eps_with(&self, tape: &mut Tape, bound: &crate::numerics::BoundMlp, x: Var, steps: &[usize]) -> Var {
        let emb: Vec<f64> = steps.iter().flat_map(|&i| time_embedding(i, self.steps)).collect();
        let e = tape.leaf(steps.len(), 2 * EMBED_FREQUENCIES, emb);
        let input = tape.concat(x, e);
        bound.forward(tape, input)
    }
}

/// Score of the noised marginal `∇ log p_i(x_t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreFunction {
    AnalyticGaussian(GaussianModel),
    AnalyticGmm(GmmPrior),
    TrainedMlp(ScoreNet),
}

impl ScoreFunction {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreFunction::AnalyticGaussian(_) => "analytic-gaussian",
            ScoreFunction::AnalyticGmm(_) => "analytic-gmm",
            ScoreFunction::TrainedMlp(_) => "trained-mlp",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreFunction::AnalyticGaussian(g) => g.dim(),
            ScoreFunction::AnalyticGmm(g) => g.dim(),
            ScoreFunction::TrainedMlp(n) => n.dim(),
        }
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<(), DiffusionError> {
        if d != self.dim() {
            return Err(DiffusionError::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        Ok(())
    }

    /// Records the score at step `i` for every row of `x`.
    pub fn record(&self, tape: &mut Tape, x: Var, i: usize, s: &NoiseSchedule) -> Var {
        let ab = s.alpha_bar(i);
        match self {
            ScoreFunction::AnalyticGaussian(g) => {
                // −C⁻¹ (x − √ᾱ μ) with C = ᾱ Σ + (1−ᾱ) I, written row-wise as x·(−P) + P √ᾱ μ.
                let c = g.cov().scale(ab).add_diag(1.0 - ab);
                let p = inverse_spd(&c).expect("marginal covariance is SPD");
                let m: Vec<f64> = g.mean().iter().map(|v| ab.sqrt() * v).collect();
                let bias = p.matvec(&m).expect("dims checked");
                let d = g.dim();
                let neg_p = tape.leaf(d, d, p.scale(-1.0).into_vec());
                let b = tape.leaf(1, d, bias);
                let lin = tape.matmul(x, neg_p);
                tape.add_row(lin, b)
            }
            ScoreFunction::AnalyticGmm(g) => tape.row_map(x, Arc::new(g.marginal(ab))),
            ScoreFunction::TrainedMlp(net) => {
                let rows = tape.shape(x).0;
                let bound = net.mlp.bind(tape);
                let eps = net.record_eps_with(tape, &bound, x, &vec![i; rows]);
                tape.scale(eps, -1.0 / (1.0 - ab).sqrt())
            }
        }
    }

    pub fn score(&self, x: &[f64], i: usize, s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
        s.check_step(i)?;
        self.check_dim(x.len())?;
        Ok(self.score_rows(x, 1, i, s))
    }

    /// Scores of `rows` samples stored row-major in `flat`.
    pub fn score_rows(&self, flat: &[f64], rows: usize, i: usize, s: &NoiseSchedule) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(rows, self.dim(), flat.to_vec());
        let out = self.record(&mut tape, x, i, s);
        tape.value(out).to_vec()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let d = self.dim();
        match self {
            ScoreFunction::AnalyticGaussian(g) => {
                ck.insert("score.meta", vec![2], vec![0.0, d as f64]);
                ck.insert("score.gaussian.mean", vec![d], g.mean().to_vec());
                ck.insert("score.gaussian.cov", vec![d, d], g.cov().as_slice().to_vec());
            }
            ScoreFunction::AnalyticGmm(g) => {
                let k = g.components();
                ck.insert("score.meta", vec![2], vec![1.0, d as f64]);
                ck.insert("score.gmm.weights", vec![k], g.weights.clone());
                ck.insert("score.gmm.means", vec![k, d], g.means.concat());
                ck.insert(
                    "score.gmm.covs",
                    vec![k, d, d],
                    g.covs.iter().flat_map(|c| c.as_slice().iter().copied()).collect(),
                );
            }
            ScoreFunction::TrainedMlp(net) => {
                ck.insert("score.meta", vec![3], vec![2.0, d as f64, net.steps as f64]);
                net.mlp.write_checkpoint(&mut ck, "score.net");
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DiffusionError> {
        let meta = &ck.get("score.meta")?.data;
        if meta.len() < 2 {
            return Err(DiffusionError::UnknownKind);
        }
        let d = meta[1] as usize;
        let gaussian_err = |_| DiffusionError::InvalidPrior("stored covariance is not PSD");
        match meta[0] as u32 {
            0 => {
                let mean = ck.get("score.gaussian.mean")?.data.clone();
                let cov = Matrix::new(d, d, ck.get("score.gaussian.cov")?.data.clone())?;
                Ok(ScoreFunction::AnalyticGaussian(GaussianModel::new(mean, cov).map_err(gaussian_err)?))
            }
            1 => {
                let weights = ck.get("score.gmm.weights")?.data.clone();
                let means = ck.get("score.gmm.means")?.data.chunks(d).map(<[f64]>::to_vec).collect();
                let covs = ck
                    .get("score.gmm.covs")?
                    .data
                    .chunks(d * d)
                    .map(|c| Matrix::new(d, d, c.to_vec()))
                    .collect::<Result<_, _>>()?;
                Ok(ScoreFunction::AnalyticGmm(GmmPrior::new(weights, means, covs)?))
            }
            2 if meta.len() == 3 => {
                let mlp = Mlp::read_checkpoint(ck, "score.net")?;
                Ok(ScoreFunction::TrainedMlp(ScoreNet::from_mlp(mlp, meta[2] as usize)?))
            }
            _ => Err(DiffusionError::UnknownKind),
        }
    }
}
