//! Transmit power normalization and the AWGN channel.
//!
//! Complex symbols are stored as interleaved `(re, im)` pairs, so a signal
//! of `k` symbols has `2k` real entries. Complex noise of variance `σ²`
//! becomes independent real noise of variance `σ²/2` per entry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{norm_sq, SeededRng, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("cannot normalize an all-zero signal")]
    ZeroSignal,
    #[error("signal length {len} does not hold {k} complex symbols")]
    Length { len: usize, k: usize },
    #[error("signal power {actual} deviates from configured power {expected}")]
    NotNormalized { expected: f64, actual: f64 },
    #[error("non-finite channel value")]
    NonFinite,
    #[error("transmit power must be positive, got {0}")]
    InvalidPower(f64),
}

/// Channel SNR and transmit power per complex symbol.
///
/// `snr_db = +∞` is the noiseless sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub power: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db: f64::INFINITY,
            power: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn new(snr_db: f64, power: f64) -> Result<Self, ChannelError> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(ChannelError::InvalidPower(power));
        }
        Ok(Self { snr_db, power })
    }

    pub fn with_snr(snr_db: f64) -> Self {
        Self { snr_db, power: 1.0 }
    }

    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// `k` complex channel symbols as `2k` interleaved reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSignal {
    values: Vec<f64>,
}

impl ChannelSignal {
    pub fn new(values: Vec<f64>) -> Result<Self, ChannelError> {
        if values.len() % 2 != 0 {
            return Err(ChannelError::Length {
                len: values.len(),
                k: values.len() / 2,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ChannelError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Number of complex symbols.
    pub fn k(&self) -> usize {
        self.values.len() / 2
    }

    /// Average power per complex symbol, `‖z‖²/k`.
    pub fn power(&self) -> f64 {
        norm_sq(&self.values) / self.k() as f64
    }
}

/// Scales `z` so that `‖z‖²/k = power`.
pub fn power_normalize(z: &[f64], k: usize, power: f64) -> Result<ChannelSignal, ChannelError> {
    if z.len() != 2 * k || k == 0 {
        return Err(ChannelError::Length { len: z.len(), k });
    }
    if !(power > 0.0) {
        return Err(ChannelError::InvalidPower(power));
    }
    let energy = norm_sq(z);
    if energy == 0.0 {
        return Err(ChannelError::ZeroSignal);
    }
    let s = (k as f64 * power / energy).sqrt();
    ChannelSignal::new(z.iter().map(|v| v * s).collect())
}

/// Row-wise power normalization recorded on a tape (each row is one signal).
pub fn power_normalize_on_tape(tape: &mut Tape, z: Var, k: usize, power: f64) -> Var {
    let sq = tape.square(z);
    let energy = tape.sum_cols(sq);
    let inv = tape.rsqrt(energy);
    let scaled = tape.scale_rows(z, inv);
    tape.scale(scaled, (k as f64 * power).sqrt())
}

/// Complex noise variance `σ_ch² = P · 10^(−SNR/10)`.
pub fn snr_to_noise_variance(cfg: &ChannelConfig) -> f64 {
    if cfg.is_noiseless() {
        return 0.0;
    }
    cfg.power * 10f64.powf(-cfg.snr_db / 10.0)
}

/// `ẑ = z + n` with independent `N(0, σ_ch²/2)` noise on every real entry.
pub fn transmit(
    z: &ChannelSignal,
    cfg: &ChannelConfig,
    rng: &mut SeededRng,
) -> Result<ChannelSignal, ChannelError> {
    let p = z.power();
    if (p - cfg.power).abs() > 1e-6 * cfg.power {
        return Err(ChannelError::NotNormalized {
            expected: cfg.power,
            actual: p,
        });
    }
    Ok(ChannelSignal {
        values: add_noise(z.values(), cfg, rng),
    })
}

/// Adds channel noise to raw interleaved values without a power check.
pub fn add_noise(z: &[f64], cfg: &ChannelConfig, rng: &mut SeededRng) -> Vec<f64> {
    let var = snr_to_noise_variance(cfg);
    if var == 0.0 {
        return z.to_vec();
    }
    let sd = (var / 2.0).sqrt();
    z.iter().map(|v| v + sd * rng.standard_normal()).collect()
}
