//! Discrete variance-preserving diffusion.
//!
//! Steps are indexed `1..=T`. Step `i` corrupts a clean sample to
//! `√ᾱ_i x0 + √(1−ᾱ_i) ε`; the reverse chain walks `T, T−1, ..., 1`.

mod score;
mod train;

use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::numerics::{MlpError, NumericsError, SeededRng, Tape, Var};

pub use score::{time_embedding, GmmPrior, ScoreFunction, ScoreNet, EMBED_FREQUENCIES};
pub use train::{train_score, train_score_net};

/// Chains advanced together on one tape.
pub const CHAIN_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("terminal alpha_bar {0:e} is not below 0.01")]
    TerminalNotNoisy(f64),
    #[error("step {step} outside 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(&'static str),
    #[error("training loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("reverse chain produced a non-finite state at step {0}")]
    NonFiniteState(usize),
    #[error("checkpoint does not describe a score function")]
    UnknownKind,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// `β_i`, `α_i = 1 − β_i` and `ᾱ_i = ∏_{j≤i} α_j`, stored for `i = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Accepts `0 ≤ β_i < 1`; zero entries give identity steps.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() {
            return Err(DiffusionError::InvalidSchedule("no steps"));
        }
        if beta.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(DiffusionError::InvalidSchedule("beta must lie in [0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, i: usize) -> Result<(), DiffusionError> {
        if i == 0 || i > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                step: i,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i - 1]
    }

    /// Reverse-step standard deviation: `√β_i` for `i > 1`, zero at `i = 1`.
    pub fn sigma(&self, i: usize) -> f64 {
        if i == 1 {
            0.0
        } else {
            self.beta(i).sqrt()
        }
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        self.alpha_bar[self.steps() - 1]
    }
}

/// Linear `β` from `beta_min` to `beta_max` over `T` steps.
pub fn make_linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidSchedule("no steps"));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiffusionError::InvalidSchedule("need 0 < beta_min <= beta_max < 1"));
    }
    let beta = (0..steps)
        .map(|j| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * j as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let s = NoiseSchedule::from_betas(beta)?;
    if s.terminal_alpha_bar() >= 0.01 {
        return Err(DiffusionError::TerminalNotNoisy(s.terminal_alpha_bar()));
    }
    Ok(s)
}

/// `√ᾱ_i x0 + √(1−ᾱ_i) ε`.
pub fn forward_sample(x0: &[f64], i: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(i)?;
    if eps.len() != x0.len() {
        return Err(DiffusionError::DimensionMismatch {
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let ab = s.alpha_bar(i);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Records `x̂0 = (x_t + (1−ᾱ_i)·s(x_t, i))/√ᾱ_i` for every row of `x`.
/// Returns `(x̂0, score)`.
pub fn tweedie_on_tape(tape: &mut Tape, x: Var, i: usize, sf: &ScoreFunction, s: &NoiseSchedule) -> (Var, Var) {
    let score = sf.record(tape, x, i, s);
    let ab = s.alpha_bar(i);
    let shifted = tape.scale(score, 1.0 - ab);
    let sum = tape.add(x, shifted);
    (tape.scale(sum, 1.0 / ab.sqrt()), score)
}

/// Tweedie posterior-mean estimate of `x0` from `x_t`.
pub fn tweedie(x_t: &[f64], i: usize, sf: &ScoreFunction, s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(i)?;
    sf.check_dim(x_t.len())?;
    let mut tape = Tape::new();
    let x = tape.row_leaf(x_t);
    let (x0, _) = tweedie_on_tape(&mut tape, x, i, sf, s);
    Ok(tape.value(x0).to_vec())
}

/// Deterministic part of the reverse step, `(x_i + β_i·score)/√α_i`, applied in place.
pub fn ancestral_mean(x: &mut [f64], score: &[f64], i: usize, s: &NoiseSchedule) {
    let (b, inv) = (s.beta(i), 1.0 / s.alpha(i).sqrt());
    for (xv, sv) in x.iter_mut().zip(score) {
        *xv = inv * (*xv + b * sv);
    }
}

/// Adds `σ_i ε` in place. No draws are consumed at `i = 1`.
pub fn ancestral_noise(x: &mut [f64], i: usize, s: &NoiseSchedule, rng: &mut SeededRng) {
    if i == 1 {
        return;
    }
    let sd = s.sigma(i);
    for xv in x.iter_mut() {
        *xv += sd * rng.standard_normal();
    }
}

/// One reverse step `x_i → x_{i−1}`.
pub fn ancestral_step(
    x_i: &[f64],
    i: usize,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(i)?;
    sf.check_dim(x_i.len())?;
    let score = sf.score(x_i, i, s)?;
    let mut x = x_i.to_vec();
    ancestral_mean(&mut x, &score, i, s);
    ancestral_noise(&mut x, i, s, rng);
    Ok(x)
}

/// Runs chains from `x_T` down to `x_0`, one RNG per chain.
///
/// Rows are processed in batches; results do not depend on the batching.
pub fn reverse_chains(
    init: Vec<Vec<f64>>,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    rngs: Vec<SeededRng>,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    assert_eq!(init.len(), rngs.len(), "one rng per chain");
    let d = sf.dim();
    if let Some(bad) = init.iter().find(|x| x.len() != d) {
        return Err(DiffusionError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let mut jobs: Vec<(Vec<Vec<f64>>, Vec<SeededRng>)> = Vec::new();
    let mut it = init.into_iter().zip(rngs);
    loop {
        let (xs, rs): (Vec<_>, Vec<_>) = it.by_ref().take(CHAIN_BATCH).unzip();
        if xs.is_empty() {
            break;
        }
        jobs.push((xs, rs));
    }
    let out: Result<Vec<Vec<Vec<f64>>>, DiffusionError> = jobs
        .into_par_iter()
        .map(|(xs, mut rs)| reverse_batch(xs, sf, s, &mut rs))
        .collect();
    Ok(out?.into_iter().flatten().collect())
}

fn reverse_batch(
    xs: Vec<Vec<f64>>,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    rngs: &mut [SeededRng],
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    let (b, d) = (xs.len(), sf.dim());
    let mut flat: Vec<f64> = xs.into_iter().flatten().collect();
    for i in (1..=s.steps()).rev() {
        let score = sf.score_rows(&flat, b, i, s);
        for (r, rng) in rngs.iter_mut().enumerate() {
            let row = &mut flat[r * d..(r + 1) * d];
            ancestral_mean(row, &score[r * d..(r + 1) * d], i, s);
            ancestral_noise(row, i, s, rng);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFiniteState(i));
        }
    }
    Ok(flat.chunks(d).map(<[f64]>::to_vec).collect())
}

/// `n` independent chains from `x_T ~ N(0, I)`; chain `c` draws from `rng.fork(c)`.
pub fn sample_unconditional(
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    n: usize,
    rng: &SeededRng,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    let d = sf.dim();
    let mut rngs: Vec<SeededRng> = (0..n as u64).map(|c| rng.fork(c)).collect();
    let init = rngs.iter_mut().map(|r| r.normal_vec(d)).collect();
    reverse_chains(init, sf, s, rngs)
}
