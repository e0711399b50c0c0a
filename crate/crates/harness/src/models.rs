//! Sources, links and diffusion priors built from a config.

use std::f64::consts::PI;

use addps_core::channel::{add_noise, snr_to_noise_variance, ChannelConfig};
use addps_core::checkpoint::Checkpoint;
use addps_core::codec::{train_deepjscc, CodecModel};
use addps_core::diffusion::{
    make_linear_schedule, train_score, GmmPrior, NoiseSchedule, ScoreFunction,
};
use addps_core::gaussian_oracle::{GaussianModel, LinearGaussianProblem};
use addps_core::numerics::{Matrix, SeededRng, TrainConfig};

use crate::config::{CodecKindSpec, ExperimentConfig, ScoreSource, SourceSpec};
use crate::HarnessError;

const CODEC_DATA_STREAM: u64 = 0xDA7A_C0DE;
const CODEC_INIT_STREAM: u64 = 0x1417_C0DE;
const SCORE_DATA_STREAM: u64 = 0xDA7A_5C0E;

#[derive(Clone, Debug)]
pub enum Source {
    Gaussian(GaussianModel),
    Gmm(GmmPrior),
}

impl Source {
    pub fn from_spec(spec: &SourceSpec) -> Result<Self, HarnessError> {
        let bad = |e: &dyn std::fmt::Display| HarnessError::validation("source", e.to_string());
        Ok(match spec {
            SourceSpec::Gaussian { dim, variance } => {
                Source::Gaussian(GaussianModel::isotropic(*dim, *variance).map_err(|e| bad(&e))?)
            }
            SourceSpec::Gmm {
                means,
                std,
                weights,
            } => {
                let w = weights
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / means.len() as f64; means.len()]);
                Source::Gmm(GmmPrior::isotropic(w, means.clone(), *std).map_err(|e| bad(&e))?)
            }
            SourceSpec::Ring { modes, radius, std } => {
                let means = (0..*modes)
                    .map(|j| {
                        let a = 2.0 * PI * j as f64 / *modes as f64;
                        vec![radius * a.cos(), radius * a.sin()]
                    })
                    .collect();
                Source::Gmm(
                    GmmPrior::isotropic(vec![1.0 / *modes as f64; *modes], means, *std)
                        .map_err(|e| bad(&e))?,
                )
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Source::Gaussian(g) => g.dim(),
            Source::Gmm(g) => g.dim(),
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        match self {
            Source::Gaussian(g) => g.sample(rng),
            Source::Gmm(g) => g.sample(rng),
        }
    }

    pub fn sample_n(&self, n: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// The source law when it is Gaussian.
    pub fn gaussian(&self) -> Option<&GaussianModel> {
        match self {
            Source::Gaussian(g) => Some(g),
            Source::Gmm(_) => None,
        }
    }

    pub fn analytic_score(&self) -> ScoreFunction {
        match self {
            Source::Gaussian(g) => ScoreFunction::AnalyticGaussian(g.clone()),
            Source::Gmm(g) => ScoreFunction::AnalyticGmm(g.clone()),
        }
    }
}

/// Transmitter plus channel up to the receiver input.
#[derive(Clone, Debug, PartialEq)]
pub enum Link {
    /// Power-normalized codec over the complex AWGN channel.
    Codec(CodecModel),
    /// `ẑ = A x + n` with real noise of variance `P · 10^(−SNR/10)`.
    Oracle(Matrix),
}

impl Link {
    pub fn transmit(
        &self,
        x: &[f64],
        ch: &ChannelConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>, HarnessError> {
        match self {
            Link::Codec(c) => {
                let z = c
                    .encode(x)
                    .map_err(|e| HarnessError::numeric("encode", e))?;
                Ok(add_noise(z.values(), ch, rng))
            }
            Link::Oracle(a) => {
                let sd = snr_to_noise_variance(ch).sqrt();
                let mut z = a
                    .matvec(x)
                    .map_err(|e| HarnessError::numeric("oracle link", e))?;
                if sd > 0.0 {
                    z.iter_mut().for_each(|v| *v += sd * rng.standard_normal());
                }
                Ok(z)
            }
        }
    }

    pub fn codec(&self) -> Option<&CodecModel> {
        match self {
            Link::Codec(c) => Some(c),
            Link::Oracle(_) => None,
        }
    }

    /// Linear-Gaussian problem seen by an oracle receiver.
    pub fn problem(
        &self,
        source: &Source,
        ch: &ChannelConfig,
    ) -> Option<Result<LinearGaussianProblem, HarnessError>> {
        let (Link::Oracle(a), Some(g)) = (self, source.gaussian()) else {
            return None;
        };
        let sx2 = g.cov().get(0, 0);
        Some(
            LinearGaussianProblem::new(a.clone(), sx2, snr_to_noise_variance(ch))
                .map_err(|e| HarnessError::numeric("oracle problem", e)),
        )
    }
}

/// Everything a receiver may read; immutable during a run.
#[derive(Clone, Debug)]
pub struct Models {
    pub source: Source,
    pub link: Link,
    pub schedule: NoiseSchedule,
    /// Built only when a receiver needs the diffusion prior.
    pub score: Option<ScoreFunction>,
}

fn train_config(lr: f64, epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: batch,
        seed,
        ..TrainConfig::default()
    }
}

/// Builds the link, training an MLP codec inline unless a checkpoint is given.
pub fn build_link(cfg: &ExperimentConfig, source: &Source) -> Result<Link, HarnessError> {
    let (n, k, spec) = (source.dim(), cfg.k(), &cfg.codec);
    let matrix = |rows: usize| -> Result<Matrix, HarnessError> {
        match &spec.matrix {
            Some(m) => Matrix::from_rows(m)
                .map_err(|e| HarnessError::validation("codec.matrix", e.to_string())),
            None => Ok(Matrix::from_fn(rows, n, |i, j| f64::from(u8::from(i == j)))),
        }
    };
    let codec = |e: addps_core::codec::CodecError| HarnessError::numeric("codec", e);
    let model = match spec.kind {
        CodecKindSpec::OracleLinear => return Ok(Link::Oracle(matrix(k)?)),
        CodecKindSpec::Identity => CodecModel::identity(n).map_err(codec)?,
        CodecKindSpec::Linear => CodecModel::linear(matrix(2 * k)?).map_err(codec)?,
        CodecKindSpec::Mlp => match &spec.checkpoint {
            Some(path) => {
                let ck = Checkpoint::load(path)
                    .map_err(|e| HarnessError::numeric(path.display().to_string(), e))?;
                let m = CodecModel::from_checkpoint(&ck).map_err(codec)?;
                if m.n_source() != n || m.k_channel() != k {
                    return Err(HarnessError::validation(
                        "codec.checkpoint",
                        format!(
                            "checkpoint codec is {}→{}, config needs {n}→{k}",
                            m.n_source(),
                            m.k_channel()
                        ),
                    ));
                }
                m
            }
            None => train_codec(cfg, source)?,
        },
    };
    Ok(Link::Codec(
        model.with_power(cfg.channel.power).map_err(codec)?,
    ))
}

/// Inline end-to-end codec training per `[codec.train]`.
pub fn train_codec(cfg: &ExperimentConfig, source: &Source) -> Result<CodecModel, HarnessError> {
    let t = &cfg.codec.train;
    let data = source.sample_n(t.samples, &mut SeededRng::new(t.seed, CODEC_DATA_STREAM));
    let init = CodecModel::mlp(
        source.dim(),
        cfg.k(),
        cfg.codec.hidden,
        &mut SeededRng::new(t.seed, CODEC_INIT_STREAM),
    )
    .and_then(|m| m.with_power(cfg.channel.power))
    .map_err(|e| HarnessError::numeric("codec init", e))?;
    let snr = t.snr_db.unwrap_or(cfg.channel.snr_db[0]);
    let ch = ChannelConfig::new(snr, cfg.channel.power)
        .map_err(|e| HarnessError::validation("codec.train.snr_db", e.to_string()))?;
    let tc = train_config(t.learning_rate, t.epochs, t.batch_size, t.seed);
    let (model, _) = train_deepjscc(&init, &data, &ch, &tc)
        .map_err(|e| HarnessError::numeric("codec training", e))?;
    Ok(model)
}

pub fn build_schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule, HarnessError> {
    let d = &cfg.diffusion;
    make_linear_schedule(d.steps, d.beta_min, d.beta_max)
        .map_err(|e| HarnessError::validation("diffusion", e.to_string()))
}

/// Analytic score, a loaded checkpoint, or a network trained inline.
pub fn build_score(
    cfg: &ExperimentConfig,
    source: &Source,
    s: &NoiseSchedule,
) -> Result<ScoreFunction, HarnessError> {
    let d = &cfg.diffusion;
    let sf = match (d.score, &d.checkpoint) {
        (ScoreSource::Analytic, _) => source.analytic_score(),
        (ScoreSource::Trained, Some(path)) => {
            let ck = Checkpoint::load(path)
                .map_err(|e| HarnessError::numeric(path.display().to_string(), e))?;
            ScoreFunction::from_checkpoint(&ck)
                .map_err(|e| HarnessError::numeric("score checkpoint", e))?
        }
        (ScoreSource::Trained, None) => train_score_net(cfg, source, s)?,
    };
    if sf.dim() != source.dim() {
        return Err(HarnessError::validation(
            "diffusion.checkpoint",
            format!(
                "score dimension {} differs from source dimension {}",
                sf.dim(),
                source.dim()
            ),
        ));
    }
    if let ScoreFunction::TrainedMlp(net) = &sf {
        if net.steps() != s.steps() {
            return Err(HarnessError::validation(
                "diffusion.checkpoint",
                format!(
                    "score trained for T = {}, config has T = {}",
                    net.steps(),
                    s.steps()
                ),
            ));
        }
    }
    Ok(sf)
}

/// Inline denoising score matching per `[diffusion.train]`.
pub fn train_score_net(
    cfg: &ExperimentConfig,
    source: &Source,
    s: &NoiseSchedule,
) -> Result<ScoreFunction, HarnessError> {
    let t = &cfg.diffusion.train;
    let data = source.sample_n(t.samples, &mut SeededRng::new(t.seed, SCORE_DATA_STREAM));
    let tc = train_config(t.learning_rate, t.epochs, t.batch_size, t.seed);
    let (sf, _) =
        train_score(&data, s, &tc).map_err(|e| HarnessError::numeric("score training", e))?;
    Ok(sf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text, Path::new("t.toml")).unwrap()
    }

    #[test]
    fn ring_means_lie_on_circle() {
        let s = Source::from_spec(&SourceSpec::Ring {
            modes: 4,
            radius: 1.5,
            std: 0.3,
        })
        .unwrap();
        let Source::Gmm(g) = s else {
            panic!("ring is a mixture")
        };
        assert_eq!(g.components(), 4);
        for m in g.means() {
            assert!((m[0].hypot(m[1]) - 1.5).abs() < 1e-12);
        }
        assert!((g.means()[1][1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_link_adds_real_noise_of_full_variance() {
        let link = Link::Oracle(Matrix::identity(1));
        let ch = ChannelConfig::with_snr(0.0);
        let mut rng = SeededRng::new(4, 0);
        let n = 20000;
        let var = (0..n)
            .map(|_| link.transmit(&[0.0], &ch, &mut rng).unwrap()[0].powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn identity_link_and_problem() {
        let c = cfg("name = \"a\"\n[source]\nkind = \"gaussian\"\ndim = 2\n");
        let src = Source::from_spec(&c.source).unwrap();
        let link = build_link(&c, &src).unwrap();
        assert_eq!(link.codec().unwrap().kind_name(), "identity");
        assert!(link.problem(&src, &ChannelConfig::with_snr(1.0)).is_none());
        let c = cfg("name = \"b\"\n[source]\nkind = \"gaussian\"\ndim = 2\nvariance = 2.0\n[codec]\nkind = \"oracle-linear\"\n");
        let src = Source::from_spec(&c.source).unwrap();
        let p = build_link(&c, &src)
            .unwrap()
            .problem(&src, &ChannelConfig::with_snr(0.0))
            .unwrap()
            .unwrap();
        assert_eq!((p.k(), p.n()), (2, 2));
        assert_eq!((p.sigma_x2(), p.sigma_n2()), (2.0, 1.0));
    }

    #[test]
    fn score_checkpoint_dimension_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        ScoreFunction::AnalyticGaussian(GaussianModel::isotropic(3, 1.0).unwrap())
            .to_checkpoint()
            .save(&path)
            .unwrap();
        let text = format!(
            "name = \"c\"\n[source]\nkind = \"gaussian\"\ndim = 2\n[diffusion]\nscore = \"trained\"\ncheckpoint = \"{}\"\n",
            path.display()
        );
        let c = cfg(&text);
        let src = Source::from_spec(&c.source).unwrap();
        let s = build_schedule(&c).unwrap();
        assert!(matches!(
            build_score(&c, &src, &s),
            Err(HarnessError::Validation { .. })
        ));
    }
}
