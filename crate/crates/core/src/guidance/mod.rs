//! Measurement guidance for the reverse diffusion chain.
//!
//! `g_Z = ∇_{x_t} ‖ẑ − E(x̂0)‖²` pulls the Tweedie estimate towards the
//! received latent; `g_X = ∇_{x_t} ‖x̃ − D(E(x̂0))‖²` pulls it towards the
//! decoded image `x̃ = D(ẑ)`. A [`GuidanceStrategy`] decides which of the two
//! is applied at each step.

mod grad;
mod sampler;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::diffusion::DiffusionError;
use crate::numerics::NumericsError;

pub use grad::{
    simultaneous_grad, x_guidance_grad, x_guidance_grad_with, z_guidance_grad, z_guidance_grad_with,
    BatchGradients, GuidanceProblem,
};
pub use sampler::{
    addps_sample, addps_sample_batch, addps_sample_many, DomainRecord, GuidanceTrace, StepRecord,
};

/// Added to the residual in the residual-normalized step rule.
pub const RESIDUAL_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid guidance config: {0}")]
    Config(&'static str),
    #[error("unknown guidance strategy `{0}`")]
    UnknownStrategy(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("guidance gradient is non-finite at step {0}")]
    NonFiniteGradient(usize),
    #[error("sampler state became non-finite at step {0}")]
    NonFiniteState(usize),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    #[serde(rename = "z")]
    ZOnly,
    #[serde(rename = "x")]
    XOnly,
    Simultaneous,
    Alternating,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 4] = [
        GuidanceMode::ZOnly,
        GuidanceMode::XOnly,
        GuidanceMode::Simultaneous,
        GuidanceMode::Alternating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::ZOnly => "z",
            GuidanceMode::XOnly => "x",
            GuidanceMode::Simultaneous => "simultaneous",
            GuidanceMode::Alternating => "alternating",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `ζ_t = ζ`.
    Constant,
    /// `ζ_t = ζ / (residual + 1e-8)`.
    ResidualNormalized,
}

/// Which step parity receives Z-domain guidance in alternating mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    EvenZ,
    OddZ,
}

/// How `∂x̂0/∂x_t` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Jacobian {
    /// Differentiates through the score inside the Tweedie estimate.
    Full,
    /// Treats `∂x̂0/∂x_t` as `I/√ᾱ_t`.
    Decoupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Z,
    X,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub zeta: f64,
    pub step_rule: StepRule,
    pub rho_z: f64,
    pub rho_x: f64,
    /// Image-domain noise scale; recorded only, absorbed into `rho_x`.
    pub sigma_x2: f64,
    pub parity: Parity,
    pub jacobian: Jacobian,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Alternating,
            zeta: 0.03,
            step_rule: StepRule::ResidualNormalized,
            rho_z: 1.0,
            rho_x: 1.0,
            sigma_x2: 1.0,
            parity: Parity::EvenZ,
            jacobian: Jacobian::Full,
        }
    }
}

impl GuidanceConfig {
    pub fn with_mode(mode: GuidanceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// `ζ = 0` is accepted and disables guidance.
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.zeta) {
            return Err(GuidanceError::Config("zeta must be finite and non-negative"));
        }
        if !ok(self.rho_z) || !ok(self.rho_x) {
            return Err(GuidanceError::Config("rho_z and rho_x must be finite and non-negative"));
        }
        if !(self.sigma_x2 > 0.0) {
            return Err(GuidanceError::Config("sigma_x2 must be positive"));
        }
        Ok(())
    }

    /// `ζ_t` for a step whose guidance residual is `residual`.
    pub fn step_size(&self, residual: f64) -> f64 {
        match self.step_rule {
            StepRule::Constant => self.zeta,
            StepRule::ResidualNormalized => self.zeta / (residual + RESIDUAL_EPS),
        }
    }
}

/// Chooses the guidance domain per reverse step.
pub trait GuidanceStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn domain(&self, step: usize, cfg: &GuidanceConfig) -> Domain;
}

struct Fixed(&'static str, Domain);

impl GuidanceStrategy for Fixed {
    fn name(&self) -> &'static str {
        self.0
    }

    fn domain(&self, _step: usize, _cfg: &GuidanceConfig) -> Domain {
        self.1
    }
}

struct AlternatingStrategy;

impl GuidanceStrategy for AlternatingStrategy {
    fn name(&self) -> &'static str {
        "alternating"
    }

    fn domain(&self, step: usize, cfg: &GuidanceConfig) -> Domain {
        let even = step % 2 == 0;
        match (cfg.parity, even) {
            (Parity::EvenZ, true) | (Parity::OddZ, false) => Domain::Z,
            _ => Domain::X,
        }
    }
}

/// Strategies addressable by name.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, Arc<dyn GuidanceStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Fixed("z", Domain::Z)));
        r.register(Arc::new(Fixed("x", Domain::X)));
        r.register(Arc::new(Fixed("simultaneous", Domain::Both)));
        r.register(Arc::new(AlternatingStrategy));
        r
    }

    /// Replaces any strategy registered under the same name.
    pub fn register(&mut self, s: Arc<dyn GuidanceStrategy>) {
        self.entries.insert(s.name().to_string(), s);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn GuidanceStrategy>, GuidanceError> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| GuidanceError::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// The built-in strategy for `cfg.mode`.
pub fn strategy_for(mode: GuidanceMode) -> Arc<dyn GuidanceStrategy> {
    StrategyRegistry::with_builtins()
        .get(mode.name())
        .expect("every mode has a built-in strategy")
}

pub fn select_domain(step: usize, cfg: &GuidanceConfig) -> Domain {
    strategy_for(cfg.mode).domain(step, cfg)
}
