//! Receivers: everything that turns received signals into reconstructions.

use std::collections::BTreeMap;
use std::sync::Arc;

use addps_core::channel::ChannelConfig;
use addps_core::diffusion::sample_unconditional;
use addps_core::gaussian_oracle::{exact_posterior, linear_map_primal};
use addps_core::guidance::{
    addps_sample_many, GuidanceConfig, GuidanceStrategy, GuidanceTrace, StrategyRegistry,
};
use addps_core::numerics::SeededRng;

use crate::models::Models;
use crate::HarnessError;

/// Inputs shared by every receiver in one cell.
pub struct CellContext<'a> {
    pub models: &'a Models,
    pub channel: ChannelConfig,
    pub guidance: GuidanceConfig,
    /// Record the guidance trace of chain 0.
    pub keep_trace: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Reconstructions {
    pub samples: Vec<Vec<f64>>,
    pub trace: Option<GuidanceTrace>,
}

impl From<Vec<Vec<f64>>> for Reconstructions {
    fn from(samples: Vec<Vec<f64>>) -> Self {
        Self {
            samples,
            trace: None,
        }
    }
}

/// One reconstruction per received signal. Chain `c` draws from `rng.fork(c)`.
pub trait Receiver: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the receiver needs the diffusion score.
    fn uses_score(&self) -> bool {
        false
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError>;
}

fn needs(name: &str, what: &str) -> HarnessError {
    HarnessError::validation("guidance.modes", format!("receiver `{name}` needs {what}"))
}

struct MapReceiver;

impl Receiver for MapReceiver {
    fn name(&self) -> &str {
        "map"
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        _rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError> {
        let m = ctx.models;
        let p = m
            .link
            .problem(&m.source, &ctx.channel)
            .ok_or_else(|| needs("map", "an oracle-linear codec"))??;
        received
            .iter()
            .map(|z| linear_map_primal(&p, z).map_err(|e| HarnessError::numeric("map", e)))
            .collect::<Result<Vec<_>, _>>()
            .map(Into::into)
    }
}

struct PosteriorReceiver;

impl Receiver for PosteriorReceiver {
    fn name(&self) -> &str {
        "posterior"
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError> {
        let m = ctx.models;
        let p = m
            .link
            .problem(&m.source, &ctx.channel)
            .ok_or_else(|| needs("posterior", "an oracle-linear codec"))??;
        received
            .iter()
            .enumerate()
            .map(|(c, z)| {
                let post =
                    exact_posterior(&p, z).map_err(|e| HarnessError::numeric("posterior", e))?;
                Ok(post.sample(&mut rng.fork(c as u64)))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Into::into)
    }
}

/// The codec decoder applied to `ẑ`: the point-estimate baseline.
struct DecoderReceiver;

impl Receiver for DecoderReceiver {
    fn name(&self) -> &str {
        "decoder"
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        _rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError> {
        let codec = ctx
            .models
            .link
            .codec()
            .ok_or_else(|| needs("decoder", "a codec"))?;
        received
            .iter()
            .map(|z| {
                codec
                    .decode(z)
                    .map_err(|e| HarnessError::numeric("decode", e))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Into::into)
    }
}

/// Prior samples that ignore the received signal.
struct UnguidedReceiver;

impl Receiver for UnguidedReceiver {
    fn name(&self) -> &str {
        "unguided"
    }

    fn uses_score(&self) -> bool {
        true
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError> {
        let m = ctx.models;
        let sf = m
            .score
            .as_ref()
            .ok_or_else(|| needs("unguided", "a score"))?;
        sample_unconditional(sf, &m.schedule, received.len(), rng)
            .map(Into::into)
            .map_err(|e| HarnessError::numeric("unguided", e))
    }
}

/// Guided posterior sampling with a named guidance strategy.
struct AddpsReceiver {
    strategy: Arc<dyn GuidanceStrategy>,
}

impl Receiver for AddpsReceiver {
    fn name(&self) -> &str {
        self.strategy.name()
    }

    fn uses_score(&self) -> bool {
        true
    }

    fn reconstruct(
        &self,
        ctx: &CellContext,
        received: &[Vec<f64>],
        rng: &SeededRng,
    ) -> Result<Reconstructions, HarnessError> {
        let m = ctx.models;
        let codec = m
            .link
            .codec()
            .ok_or_else(|| needs(self.name(), "a codec"))?;
        let sf = m
            .score
            .as_ref()
            .ok_or_else(|| needs(self.name(), "a score"))?;
        let mut out = addps_sample_many(
            received,
            codec,
            sf,
            &m.schedule,
            &ctx.guidance,
            self.strategy.as_ref(),
            rng,
            ctx.keep_trace,
        )
        .map_err(|e| HarnessError::numeric(self.name(), e))?;
        let trace = ctx.keep_trace.then(|| std::mem::take(&mut out[0].1));
        Ok(Reconstructions {
            samples: out.into_iter().map(|(x, _)| x).collect(),
            trace,
        })
    }
}

/// Receivers addressable by name.
#[derive(Clone, Default)]
pub struct ReceiverRegistry {
    entries: BTreeMap<String, Arc<dyn Receiver>>,
}

impl ReceiverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `map`, `posterior`, `decoder`, `unguided`, and one guided receiver
    /// per built-in guidance strategy.
    pub fn with_builtins() -> Self {
        Self::with_strategies(&StrategyRegistry::with_builtins())
    }

    pub fn with_strategies(strategies: &StrategyRegistry) -> Self {
        let mut r = Self::new();
        r.register(Arc::new(MapReceiver));
        r.register(Arc::new(PosteriorReceiver));
        r.register(Arc::new(DecoderReceiver));
        r.register(Arc::new(UnguidedReceiver));
        for name in strategies.names() {
            let strategy = strategies.get(name).expect("listed name resolves");
            r.register(Arc::new(AddpsReceiver { strategy }));
        }
        r
    }

    /// Replaces any receiver registered under the same name.
    pub fn register(&mut self, r: Arc<dyn Receiver>) {
        self.entries.insert(r.name().to_string(), r);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Receiver>, HarnessError> {
        self.entries.get(name).cloned().ok_or_else(|| {
            HarnessError::validation(
                "guidance.modes",
                format!(
                    "unknown receiver `{name}`; known: {}",
                    self.names().join(", ")
                ),
            )
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let r = ReceiverRegistry::with_builtins();
        assert_eq!(
            r.names(),
            vec![
                "alternating",
                "decoder",
                "map",
                "posterior",
                "simultaneous",
                "unguided",
                "x",
                "z"
            ]
        );
        assert!(r.get("z").unwrap().uses_score());
        assert!(!r.get("map").unwrap().uses_score());
        assert!(matches!(r.get("dps"), Err(HarnessError::Validation { .. })));
    }

    #[test]
    fn custom_receiver_overrides() {
        struct Zeros;
        impl Receiver for Zeros {
            fn name(&self) -> &str {
                "decoder"
            }
            fn reconstruct(
                &self,
                _: &CellContext,
                received: &[Vec<f64>],
                _: &SeededRng,
            ) -> Result<Reconstructions, HarnessError> {
                Ok(received
                    .iter()
                    .map(|z| vec![0.0; z.len()])
                    .collect::<Vec<_>>()
                    .into())
            }
        }
        let mut r = ReceiverRegistry::with_builtins();
        r.register(Arc::new(Zeros));
        assert_eq!(r.names().len(), 8);
        assert!(!r.get("decoder").unwrap().uses_score());
    }
}
