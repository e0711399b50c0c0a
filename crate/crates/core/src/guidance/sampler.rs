use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{strategy_for, Domain, GuidanceConfig, GuidanceError, GuidanceProblem, GuidanceStrategy};
use crate::channel::ChannelSignal;
use crate::codec::CodecModel;
use crate::diffusion::{ancestral_mean, ancestral_noise, NoiseSchedule, ScoreFunction, CHAIN_BATCH};
use crate::numerics::{norm, SeededRng};

/// One guidance term applied at a step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub domain: Domain,
    pub residual: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub zeta_t: f64,
    pub terms: Vec<DomainRecord>,
}

/// Per-step guidance record of one chain, newest step last.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTrace {
    pub steps: Vec<StepRecord>,
}

impl GuidanceTrace {
    /// Number of steps that applied guidance in `domain`.
    pub fn count(&self, domain: Domain) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.terms)
            .filter(|t| t.domain == domain)
            .count()
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), GuidanceError> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, GuidanceError> {
        let mut steps = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line).map_err(|e| GuidanceError::Trace {
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { steps })
    }
}

/// Single-chain sampler; see [`addps_sample_batch`].
pub fn addps_sample(
    z_hat: &ChannelSignal,
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, GuidanceTrace), GuidanceError> {
    let strategy = strategy_for(cfg.mode);
    let mut out = addps_sample_batch(&[z_hat.values().to_vec()], codec, sf, s, cfg, strategy.as_ref(), std::slice::from_mut(rng), true)?;
    Ok(out.pop().expect("one chain"))
}

/// Guided reverse chains, one per received signal, advanced together.
///
/// Chain `c` decodes `x̃ = D(ẑ_c)` once, starts from
/// `√ᾱ_T x̃ + √(1−ᾱ_T) ε`, and at each step `t = T..1` forms the unguided
/// ancestral proposal `x'` before subtracting `ζ_t g_t` evaluated at `x_t`.
/// Only `rngs[c]` is consumed by chain `c`, so batching does not change results.
#[allow(clippy::too_many_arguments)]
pub fn addps_sample_batch(
    z_hats: &[Vec<f64>],
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
    strategy: &dyn GuidanceStrategy,
    rngs: &mut [SeededRng],
    keep_trace: bool,
) -> Result<Vec<(Vec<f64>, GuidanceTrace)>, GuidanceError> {
    cfg.validate()?;
    assert_eq!(z_hats.len(), rngs.len(), "one rng per chain");
    let p = GuidanceProblem::new(codec, sf, s, cfg.jacobian)?;
    let (b, d) = (z_hats.len(), p.dim());
    let z_flat: Vec<f64> = z_hats.concat();
    let mut x_tilde = Vec::with_capacity(b * d);
    for z in z_hats {
        x_tilde.extend(codec.decode(z)?);
    }

    let t = s.steps();
    let (a, c) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
    let mut x = Vec::with_capacity(b * d);
    for (r, rng) in rngs.iter_mut().enumerate() {
        let eps = rng.normal_vec(d);
        x.extend((0..d).map(|j| a * x_tilde[r * d + j] + c * eps[j]));
    }
    let mut traces = vec![GuidanceTrace::default(); b];

    for i in (1..=t).rev() {
        let domain = strategy.domain(i, cfg);
        let want_z = matches!(domain, Domain::Z | Domain::Both);
        let want_x = matches!(domain, Domain::X | Domain::Both);
        let ev = p.evaluate(
            &x,
            b,
            i,
            want_z.then_some(z_flat.as_slice()),
            want_x.then_some(x_tilde.as_slice()),
        )?;
        for (r, rng) in rngs.iter_mut().enumerate() {
            let rows = r * d..(r + 1) * d;
            let mut next = x[rows.clone()].to_vec();
            ancestral_mean(&mut next, &ev.score[rows.clone()], i, s);
            ancestral_noise(&mut next, i, s, rng);

            let mut g = vec![0.0; d];
            let mut terms = Vec::with_capacity(2);
            let mut res_sq = 0.0;
            for (dom, part, weight) in [
                (Domain::Z, &ev.z, cfg.rho_z),
                (Domain::X, &ev.x, cfg.rho_x),
            ] {
                let Some((grads, res)) = part else { continue };
                let gr = &grads[rows.clone()];
                // a single-domain step applies its gradient unweighted
                let w = if domain == Domain::Both { weight } else { 1.0 };
                for j in 0..d {
                    g[j] += w * gr[j];
                }
                res_sq += res[r] * res[r];
                terms.push(DomainRecord {
                    domain: dom,
                    residual: res[r],
                    grad_norm: norm(gr),
                });
            }
            let zeta_t = cfg.step_size(res_sq.sqrt());
            for j in 0..d {
                next[j] -= zeta_t * g[j];
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(GuidanceError::NonFiniteState(i));
            }
            x[rows].copy_from_slice(&next);
            if keep_trace {
                traces[r].steps.push(StepRecord { step: i, zeta_t, terms });
            }
        }
    }
    Ok(x.chunks(d).map(<[f64]>::to_vec).zip(traces).collect())
}

/// Runs [`addps_sample_batch`] over many signals in parallel batches;
/// chain `c` draws from `root.fork(c)`.
#[allow(clippy::too_many_arguments)]
pub fn addps_sample_many(
    z_hats: &[Vec<f64>],
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
    strategy: &dyn GuidanceStrategy,
    root: &SeededRng,
    keep_trace: bool,
) -> Result<Vec<(Vec<f64>, GuidanceTrace)>, GuidanceError> {
    let batches: Vec<(usize, &[Vec<f64>])> = z_hats.chunks(CHAIN_BATCH).enumerate().collect();
    let out: Result<Vec<_>, GuidanceError> = batches
        .into_par_iter()
        .map(|(bi, zs)| {
            let mut rngs: Vec<SeededRng> = (0..zs.len())
                .map(|j| root.fork((bi * CHAIN_BATCH + j) as u64))
                .collect();
            addps_sample_batch(zs, codec, sf, s, cfg, strategy, &mut rngs, keep_trace)
        })
        .collect();
    Ok(out?.into_iter().flatten().collect())
}
