//! Scenario configuration.
//!
//! Scenarios are TOML documents. Top-level keys are `name`, `seed` and
//! `seeds` (the number of consecutive seeds starting at `seed`); the
//! sections are `[source]`, `[codec]`, `[channel]`, `[diffusion]`,
//! `[guidance]` and `[evaluation]`. Unknown keys are rejected. Relative
//! checkpoint paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use addps_core::guidance::{GuidanceConfig, GuidanceMode, Jacobian, Parity, StepRule};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    pub source: SourceSpec,
    #[serde(default)]
    pub codec: CodecSpec,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub guidance: GuidanceSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

fn default_seeds() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSpec {
    /// `N(0, variance · I)`.
    Gaussian {
        dim: usize,
        #[serde(default = "one")]
        variance: f64,
    },
    /// Isotropic mixture; `weights` default to uniform.
    Gmm {
        means: Vec<Vec<f64>>,
        std: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// `modes` equal-weight components evenly spaced on a circle in 2-D.
    Ring { modes: usize, radius: f64, std: f64 },
}

impl SourceSpec {
    pub fn dim(&self) -> usize {
        match self {
            SourceSpec::Gaussian { dim, .. } => *dim,
            SourceSpec::Gmm { means, .. } => means.first().map_or(0, Vec::len),
            SourceSpec::Ring { .. } => 2,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKindSpec {
    Identity,
    Linear,
    Mlp,
    /// `ẑ = A x + n` with real `N(0, σ²)` noise and no power normalization;
    /// `k` counts real rows of `A`.
    OracleLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSpec {
    pub kind: CodecKindSpec,
    /// Complex channel symbols, or real rows for `oracle-linear`.
    /// Defaults to `N/2` (`N` for `oracle-linear`).
    pub k: Option<usize>,
    pub hidden: usize,
    /// Encoder matrix for `linear` (`2k × N`) and `oracle-linear` (`k × N`).
    pub matrix: Option<Vec<Vec<f64>>>,
    pub checkpoint: Option<PathBuf>,
    pub train: TrainSpec,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            kind: CodecKindSpec::Identity,
            k: None,
            hidden: 32,
            matrix: None,
            checkpoint: None,
            train: TrainSpec::default(),
        }
    }
}

/// Inline codec training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Training SNR; defaults to the first evaluated SNR.
    pub snr_db: Option<f64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            samples: 4096,
            epochs: 150,
            batch_size: 128,
            learning_rate: 3e-3,
            seed: 0,
            snr_db: None,
        }
    }
}

/// Inline denoising score matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreTrainSpec {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ScoreTrainSpec {
    fn default() -> Self {
        Self {
            samples: 8192,
            epochs: 200,
            batch_size: 256,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub snr_db: Vec<f64>,
    pub power: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            snr_db: vec![-1.0],
            power: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Closed-form score of the configured source.
    Analytic,
    /// Network trained inline or loaded from `checkpoint`.
    Trained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub score: ScoreSource,
    pub checkpoint: Option<PathBuf>,
    pub train: ScoreTrainSpec,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            score: ScoreSource::Analytic,
            checkpoint: None,
            train: ScoreTrainSpec::default(),
        }
    }
}

/// Receivers to evaluate and the guidance settings they share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSpec {
    /// Receiver names; see [`crate::ReceiverRegistry`].
    pub modes: Vec<String>,
    pub zeta: f64,
    pub step_rule: StepRule,
    pub parity: Parity,
    pub rho_z: f64,
    pub rho_x: f64,
    pub sigma_x2: f64,
    pub jacobian: Jacobian,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self {
            modes: vec!["alternating".to_string()],
            zeta: 0.03,
            step_rule: StepRule::ResidualNormalized,
            parity: Parity::EvenZ,
            rho_z: 1.0,
            rho_x: 1.0,
            sigma_x2: 1.0,
            jacobian: Jacobian::Full,
        }
    }
}

impl GuidanceSpec {
    /// Sampler settings for one mode; non-guidance receivers get the
    /// default mode, which they ignore.
    pub fn guidance_config(&self, mode: &str) -> GuidanceConfig {
        GuidanceConfig {
            mode: GuidanceMode::from_name(mode).unwrap_or(GuidanceMode::Alternating),
            zeta: self.zeta,
            step_rule: self.step_rule,
            rho_z: self.rho_z,
            rho_x: self.rho_x,
            sigma_x2: self.sigma_x2,
            parity: self.parity,
            jacobian: self.jacobian,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Frechet,
    SlicedW,
    Mse,
    Psnr,
    VarRatio,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Frechet,
        Metric::SlicedW,
        Metric::Mse,
        Metric::Psnr,
        Metric::VarRatio,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Sources drawn per (mode, snr, seed) cell.
    pub n_eval: usize,
    /// Source draws used as the distributional reference.
    pub reference: usize,
    pub metrics: Vec<Metric>,
    pub sliced_projections: usize,
    pub psnr_peak: f64,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            n_eval: 1000,
            reference: 4000,
            metrics: Metric::ALL.to_vec(),
            sliced_projections: 64,
            psnr_peak: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. `origin` labels errors and
    /// anchors relative paths.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.display().to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.codec.checkpoint, &mut cfg.diffusion.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seeds evaluated by this scenario, in order.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|i| self.seed + i).collect()
    }

    /// Effective `k`: complex symbols, or real rows for `oracle-linear`.
    pub fn k(&self) -> usize {
        let n = self.source.dim();
        self.codec.k.unwrap_or(match self.codec.kind {
            CodecKindSpec::OracleLinear => self.codec.matrix.as_ref().map_or(n, Vec::len),
            _ => n / 2,
        })
    }

    /// Checks every invariant that does not need a trained model.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.trim().is_empty() {
            return Err(HarnessError::validation("name", "must not be empty"));
        }
        if self.seeds == 0 {
            return Err(HarnessError::validation("seeds", "must be at least 1"));
        }
        self.validate_source()?;
        self.validate_codec()?;
        let ch = &self.channel;
        if ch.snr_db.is_empty() {
            return Err(HarnessError::validation(
                "channel.snr_db",
                "needs at least one value",
            ));
        }
        if ch
            .snr_db
            .iter()
            .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return Err(HarnessError::validation(
                "channel.snr_db",
                "values must be finite or +inf",
            ));
        }
        if !(ch.power > 0.0 && ch.power.is_finite()) {
            return Err(HarnessError::validation(
                "channel.power",
                "must be positive",
            ));
        }
        let d = &self.diffusion;
        if d.steps == 0 {
            return Err(HarnessError::validation(
                "diffusion.steps",
                "must be at least 1",
            ));
        }
        if !(d.beta_min > 0.0 && d.beta_min <= d.beta_max && d.beta_max < 1.0) {
            return Err(HarnessError::validation(
                "diffusion.beta_min",
                "need 0 < beta_min <= beta_max < 1",
            ));
        }
        if let Some(p) = &d.checkpoint {
            check_path("diffusion.checkpoint", p)?;
        }
        if d.checkpoint.is_some() && d.score == ScoreSource::Analytic {
            return Err(HarnessError::validation(
                "diffusion.checkpoint",
                "only used with score = \"trained\"",
            ));
        }
        check_train(
            "diffusion.train",
            d.train.samples,
            d.train.batch_size,
            d.train.learning_rate,
        )?;
        let g = &self.guidance;
        if g.modes.is_empty() {
            return Err(HarnessError::validation(
                "guidance.modes",
                "needs at least one receiver",
            ));
        }
        for (i, m) in g.modes.iter().enumerate() {
            if g.modes[..i].contains(m) {
                return Err(HarnessError::validation(
                    "guidance.modes",
                    format!("`{m}` is listed twice"),
                ));
            }
        }
        g.guidance_config("alternating")
            .validate()
            .map_err(|e| HarnessError::validation("guidance", e.to_string()))?;
        let e = &self.evaluation;
        if e.n_eval < 2 {
            return Err(HarnessError::validation(
                "evaluation.n_eval",
                "must be at least 2",
            ));
        }
        if e.reference < 2 {
            return Err(HarnessError::validation(
                "evaluation.reference",
                "must be at least 2",
            ));
        }
        if e.sliced_projections == 0 {
            return Err(HarnessError::validation(
                "evaluation.sliced_projections",
                "must be at least 1",
            ));
        }
        if !(e.psnr_peak > 0.0 && e.psnr_peak.is_finite()) {
            return Err(HarnessError::validation(
                "evaluation.psnr_peak",
                "must be positive",
            ));
        }
        Ok(())
    }

    fn validate_source(&self) -> Result<(), HarnessError> {
        match &self.source {
            SourceSpec::Gaussian { dim, variance } => {
                if *dim == 0 {
                    return Err(HarnessError::validation("source.dim", "must be at least 1"));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(HarnessError::validation(
                        "source.variance",
                        "must be positive",
                    ));
                }
            }
            SourceSpec::Gmm {
                means,
                std,
                weights,
            } => {
                let d = self.source.dim();
                if d == 0 || means.iter().any(|m| m.len() != d) {
                    return Err(HarnessError::validation(
                        "source.means",
                        "need one or more means of equal, nonzero length",
                    ));
                }
                if !(*std > 0.0) {
                    return Err(HarnessError::validation("source.std", "must be positive"));
                }
                if let Some(w) = weights {
                    if w.len() != means.len()
                        || w.iter().any(|x| !(*x >= 0.0))
                        || w.iter().sum::<f64>() <= 0.0
                    {
                        return Err(HarnessError::validation(
                            "source.weights",
                            "need one non-negative weight per mean",
                        ));
                    }
                }
            }
            SourceSpec::Ring { modes, radius, std } => {
                if *modes == 0 {
                    return Err(HarnessError::validation(
                        "source.modes",
                        "must be at least 1",
                    ));
                }
                if !(radius.is_finite() && *std > 0.0) {
                    return Err(HarnessError::validation(
                        "source.std",
                        "need finite radius and positive std",
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_codec(&self) -> Result<(), HarnessError> {
        let (n, k, c) = (self.source.dim(), self.k(), &self.codec);
        if k == 0 {
            return Err(HarnessError::validation("codec.k", "must be at least 1"));
        }
        // Real-pair accounting: 2k real channel uses per N source reals.
        let real_uses = if c.kind == CodecKindSpec::OracleLinear {
            k
        } else {
            2 * k
        };
        if real_uses > n {
            return Err(HarnessError::validation(
                "BCR",
                format!("{real_uses} real channel uses exceed source dimension {n}; need k <= N/2"),
            ));
        }
        match c.kind {
            CodecKindSpec::Identity if real_uses != n => {
                return Err(HarnessError::validation(
                    "codec.k",
                    "identity codec needs 2k = N",
                ));
            }
            CodecKindSpec::Linear | CodecKindSpec::OracleLinear => {
                if let Some(m) = &c.matrix {
                    if m.len() != real_uses || m.iter().any(|r| r.len() != n) {
                        return Err(HarnessError::validation(
                            "codec.matrix",
                            format!("must be {real_uses} x {n}"),
                        ));
                    }
                }
            }
            _ => {}
        }
        if c.kind == CodecKindSpec::Mlp && c.hidden == 0 {
            return Err(HarnessError::validation(
                "codec.hidden",
                "must be at least 1",
            ));
        }
        if let Some(p) = &c.checkpoint {
            if c.kind != CodecKindSpec::Mlp {
                return Err(HarnessError::validation(
                    "codec.checkpoint",
                    "only mlp codecs load checkpoints",
                ));
            }
            check_path("codec.checkpoint", p)?;
        }
        check_train(
            "codec.train",
            c.train.samples,
            c.train.batch_size,
            c.train.learning_rate,
        )?;
        if c.kind == CodecKindSpec::OracleLinear {
            if !matches!(self.source, SourceSpec::Gaussian { .. }) {
                return Err(HarnessError::validation(
                    "codec.kind",
                    "oracle-linear needs a gaussian source",
                ));
            }
        }
        Ok(())
    }

    /// Pretty TOML of the resolved config, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}

fn check_path(field: &str, p: &Path) -> Result<(), HarnessError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(HarnessError::validation(
            field,
            format!("{} does not exist", p.display()),
        ))
    }
}

fn check_train(
    field: &str,
    samples: usize,
    batch_size: usize,
    lr: f64,
) -> Result<(), HarnessError> {
    if samples == 0 || batch_size == 0 {
        return Err(HarnessError::validation(
            field,
            "samples and batch_size must be at least 1",
        ));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(HarnessError::validation(
            field,
            "learning_rate must be finite and non-negative",
        ));
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ExperimentConfig::from_toml(&text, path)
}
