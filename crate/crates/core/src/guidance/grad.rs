use super::{GuidanceConfig, GuidanceError, Jacobian};
use crate::channel::ChannelSignal;
use crate::codec::CodecModel;
use crate::diffusion::{tweedie_on_tape, NoiseSchedule, ScoreFunction};
use crate::numerics::Tape;

/// Codec, prior and schedule shared by every guidance evaluation.
#[derive(Clone, Copy)]
pub struct GuidanceProblem<'a> {
    pub codec: &'a CodecModel,
    pub sf: &'a ScoreFunction,
    pub schedule: &'a NoiseSchedule,
    pub jacobian: Jacobian,
}

/// Per-row results of one guidance evaluation over a batch of chain states.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub rows: usize,
    /// Score at the evaluated states, row-major.
    pub score: Vec<f64>,
    /// `(∇‖ẑ − E(x̂0)‖², ‖ẑ − E(x̂0)‖)` per row, when requested.
    pub z: Option<(Vec<f64>, Vec<f64>)>,
    /// `(∇‖x̃ − D(E(x̂0))‖², ‖x̃ − D(E(x̂0))‖)` per row, when requested.
    pub x: Option<(Vec<f64>, Vec<f64>)>,
}

fn row_norms(values: &[f64], cols: usize) -> Vec<f64> {
    values.chunks(cols).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

impl<'a> GuidanceProblem<'a> {
    pub fn new(
        codec: &'a CodecModel,
        sf: &'a ScoreFunction,
        schedule: &'a NoiseSchedule,
        jacobian: Jacobian,
    ) -> Result<Self, GuidanceError> {
        if codec.n_source() != sf.dim() {
            return Err(GuidanceError::DimensionMismatch {
                expected: codec.n_source(),
                got: sf.dim(),
            });
        }
        Ok(Self {
            codec,
            sf,
            schedule,
            jacobian,
        })
    }

    pub fn dim(&self) -> usize {
        self.sf.dim()
    }

    fn check(&self, what: Option<&[f64]>, rows: usize, cols: usize) -> Result<(), GuidanceError> {
        match what {
            Some(v) if v.len() != rows * cols => Err(GuidanceError::DimensionMismatch {
                expected: rows * cols,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Evaluates the score and the requested guidance terms at step `i` for
    /// `rows` states stored row-major in `x`.
    pub fn evaluate(
        &self,
        x: &[f64],
        rows: usize,
        i: usize,
        z_hat: Option<&[f64]>,
        x_tilde: Option<&[f64]>,
    ) -> Result<BatchGradients, GuidanceError> {
        self.schedule.check_step(i)?;
        let d = self.dim();
        let two_k = 2 * self.codec.k_channel();
        self.check(Some(x), rows, d)?;
        self.check(z_hat, rows, two_k)?;
        self.check(x_tilde, rows, d)?;

        let mut tape = Tape::new();
        let xv = tape.leaf(rows, d, x.to_vec());
        let ab = self.schedule.alpha_bar(i);
        let (x0, score) = match self.jacobian {
            Jacobian::Full => {
                let (x0, s) = tweedie_on_tape(&mut tape, xv, i, self.sf, self.schedule);
                (x0, tape.value(s).to_vec())
            }
            Jacobian::Decoupled => {
                let s = self.sf.score_rows(x, rows, i, self.schedule);
                let shift: Vec<f64> = s.iter().map(|v| (1.0 - ab) * v / ab.sqrt()).collect();
                let c = tape.leaf(rows, d, shift);
                let scaled = tape.scale(xv, 1.0 / ab.sqrt());
                (tape.add(scaled, c), s)
            }
        };
        let mut out = BatchGradients {
            rows,
            score,
            z: None,
            x: None,
        };
        if z_hat.is_none() && x_tilde.is_none() {
            return Ok(out);
        }
        let e = self.codec.record_encode(&mut tape, x0);
        if let Some(z) = z_hat {
            let zl = tape.leaf(rows, two_k, z.to_vec());
            let diff = tape.sub(e, zl);
            let loss = tape.sum_sq(diff);
            let res = row_norms(tape.value(diff), two_k);
            let g = tape.backward(loss)?.wrt(xv);
            out.z = Some((g, res));
        }
        if let Some(xt) = x_tilde {
            let dec = self.codec.record_decode(&mut tape, e);
            let xl = tape.leaf(rows, d, xt.to_vec());
            let diff = tape.sub(dec, xl);
            let loss = tape.sum_sq(diff);
            let res = row_norms(tape.value(diff), d);
            let g = tape.backward(loss)?.wrt(xv);
            out.x = Some((g, res));
        }
        let finite = |p: &Option<(Vec<f64>, Vec<f64>)>| {
            p.as_ref()
                .is_none_or(|(g, r)| g.iter().chain(r).all(|v| v.is_finite()))
        };
        if !finite(&out.z) || !finite(&out.x) {
            return Err(GuidanceError::NonFiniteGradient(i));
        }
        Ok(out)
    }
}

pub fn z_guidance_grad_with(
    x_t: &[f64],
    i: usize,
    z_hat: &ChannelSignal,
    p: &GuidanceProblem,
) -> Result<(Vec<f64>, f64), GuidanceError> {
    let (g, r) = p.evaluate(x_t, 1, i, Some(z_hat.values()), None)?.z.expect("requested");
    Ok((g, r[0]))
}

pub fn x_guidance_grad_with(
    x_t: &[f64],
    i: usize,
    x_tilde: &[f64],
    p: &GuidanceProblem,
) -> Result<(Vec<f64>, f64), GuidanceError> {
    let (g, r) = p.evaluate(x_t, 1, i, None, Some(x_tilde))?.x.expect("requested");
    Ok((g, r[0]))
}

/// `∇_{x_t} ‖ẑ − E(x̂0)‖²` through the full Tweedie Jacobian, and the residual norm.
pub fn z_guidance_grad(
    x_t: &[f64],
    i: usize,
    z_hat: &ChannelSignal,
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
) -> Result<(Vec<f64>, f64), GuidanceError> {
    z_guidance_grad_with(x_t, i, z_hat, &GuidanceProblem::new(codec, sf, s, Jacobian::Full)?)
}

/// `∇_{x_t} ‖x̃ − D(E(x̂0))‖²` through the full Tweedie Jacobian, and the residual norm.
pub fn x_guidance_grad(
    x_t: &[f64],
    i: usize,
    x_tilde: &[f64],
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
) -> Result<(Vec<f64>, f64), GuidanceError> {
    x_guidance_grad_with(x_t, i, x_tilde, &GuidanceProblem::new(codec, sf, s, Jacobian::Full)?)
}

/// `ρ_Z g_Z + ρ_X g_X` at a shared Tweedie estimate.
#[allow(clippy::too_many_arguments)]
pub fn simultaneous_grad(
    x_t: &[f64],
    i: usize,
    z_hat: &ChannelSignal,
    x_tilde: &[f64],
    codec: &CodecModel,
    sf: &ScoreFunction,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>, GuidanceError> {
    let p = GuidanceProblem::new(codec, sf, s, cfg.jacobian)?;
    let b = p.evaluate(x_t, 1, i, Some(z_hat.values()), Some(x_tilde))?;
    let (gz, _) = b.z.expect("requested");
    let (gx, _) = b.x.expect("requested");
    Ok(gz.iter().zip(&gx).map(|(a, c)| cfg.rho_z * a + cfg.rho_x * c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, tweedie, GmmPrior};
    use crate::gaussian_oracle::GaussianModel;
    use crate::numerics::{Matrix, SeededRng};

    fn setup() -> (NoiseSchedule, ScoreFunction, CodecModel) {
        let s = make_linear_schedule(100, 1e-3, 0.1).unwrap();
        let sf = ScoreFunction::AnalyticGaussian(GaussianModel::new(vec![0.2, -0.1], Matrix::from_diag(&[1.5, 0.7])).unwrap());
        (s, sf, CodecModel::identity(2).unwrap())
    }

    #[test]
    fn consistent_points_have_zero_gradient() {
        let (s, sf, codec) = setup();
        let x = [0.4, 1.1];
        let x0 = tweedie(&x, 30, &sf, &s).unwrap();
        let z = codec.encode(&x0).unwrap();
        let (g, r) = z_guidance_grad(&x, 30, &z, &codec, &sf, &s).unwrap();
        assert!(r < 1e-12 && g.iter().all(|v| v.abs() < 1e-12));
        let xt = codec.decode(z.values()).unwrap();
        let (g, r) = x_guidance_grad(&x, 30, &xt, &codec, &sf, &s).unwrap();
        assert!(r < 1e-12 && g.iter().all(|v| v.abs() < 1e-12));
        let cfg = GuidanceConfig::default();
        let g = simultaneous_grad(&x, 30, &z, &xt, &codec, &sf, &s, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn simultaneous_is_weighted_sum() {
        let (s, sf, codec) = setup();
        let mut rng = SeededRng::new(4, 0);
        let x = rng.normal_vec(2);
        let z = ChannelSignal::new(rng.normal_vec(2)).unwrap();
        let xt = rng.normal_vec(2);
        let (gz, _) = z_guidance_grad(&x, 50, &z, &codec, &sf, &s).unwrap();
        let (gx, _) = x_guidance_grad(&x, 50, &xt, &codec, &sf, &s).unwrap();
        let cfg = GuidanceConfig::default();
        let g = simultaneous_grad(&x, 50, &z, &xt, &codec, &sf, &s, &cfg).unwrap();
        for j in 0..2 {
            assert!((g[j] - gz[j] - gx[j]).abs() < 1e-12);
        }
        let only_x = GuidanceConfig {
            rho_z: 0.0,
            rho_x: 0.3,
            ..cfg
        };
        let g = simultaneous_grad(&x, 50, &z, &xt, &codec, &sf, &s, &only_x).unwrap();
        for j in 0..2 {
            assert_eq!(g[j], 0.3 * gx[j]);
        }
    }

    #[test]
    fn identity_x_guidance_reduces_to_tweedie_residual() {
        // With the identity codec D(E(x̂0)) = x̂0·√(kP)/‖x̂0‖, so compare against
        // central differences of ‖x̃ − normalize(x̂0(x))‖².
        let (s, sf, codec) = setup();
        let x = [0.3, -0.8];
        let xt = [1.0, 0.2];
        let (g, _) = x_guidance_grad(&x, 20, &xt, &codec, &sf, &s).unwrap();
        let f = |x: &[f64]| {
            let x0 = tweedie(x, 20, &sf, &s).unwrap();
            let n = codec.encode(&x0).unwrap();
            n.values().iter().zip(&xt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        for j in 0..2 {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn decoupled_jacobian_is_scaled_identity_pullback() {
        let (s, sf, codec) = setup();
        let x = [0.6, 0.1];
        let xt = [0.0, 1.0];
        let p = GuidanceProblem::new(&codec, &sf, &s, Jacobian::Decoupled).unwrap();
        let (g, _) = x_guidance_grad_with(&x, 40, &xt, &p).unwrap();
        // For the identity codec the loss depends on x only through x̂0, so
        // g = (1/√ᾱ)·∇_{x̂0}‖x̃ − n(x̂0)‖².
        let x0 = tweedie(&x, 40, &sf, &s).unwrap();
        let h = 1e-6;
        let f = |v: &[f64]| {
            let n = codec.encode(v).unwrap();
            n.values().iter().zip(&xt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let ab = s.alpha_bar(40);
        for j in 0..2 {
            let mut a = x0.clone();
            let mut b = x0.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h) / ab.sqrt();
            assert!((g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn batched_rows_match_single_evaluations() {
        let s = make_linear_schedule(100, 1e-3, 0.1).unwrap();
        let mut rng = SeededRng::new(9, 0);
        let codec = CodecModel::mlp(2, 1, 16, &mut rng).unwrap();
        let sf = ScoreFunction::AnalyticGmm(
            GmmPrior::isotropic(vec![0.5, 0.5], vec![vec![-1.0, 0.0], vec![1.0, 0.5]], 0.4).unwrap(),
        );
        let p = GuidanceProblem::new(&codec, &sf, &s, Jacobian::Full).unwrap();
        let xs = rng.normal_vec(6);
        let zs = rng.normal_vec(6);
        let xts = rng.normal_vec(6);
        let all = p.evaluate(&xs, 3, 60, Some(&zs), Some(&xts)).unwrap();
        for r in 0..3 {
            let one = p
                .evaluate(&xs[2 * r..2 * r + 2], 1, 60, Some(&zs[2 * r..2 * r + 2]), Some(&xts[2 * r..2 * r + 2]))
                .unwrap();
            assert_eq!(one.score, all.score[2 * r..2 * r + 2]);
            assert_eq!(one.z.as_ref().unwrap().0, all.z.as_ref().unwrap().0[2 * r..2 * r + 2]);
            assert_eq!(one.x.as_ref().unwrap().1[0], all.x.as_ref().unwrap().1[r]);
        }
    }

    #[test]
    fn dimension_errors() {
        let (s, sf, _) = setup();
        let codec = CodecModel::identity(4).unwrap();
        assert!(GuidanceProblem::new(&codec, &sf, &s, Jacobian::Full).is_err());
        let codec = CodecModel::identity(2).unwrap();
        let z = ChannelSignal::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(z_guidance_grad(&[0.0, 1.0], 5, &z, &codec, &sf, &s).is_err());
    }
}
