//! Semantic encoder/decoder pairs.
//!
//! The encoder includes the power normalization layer, so every encoded
//! signal carries exactly `P` per complex symbol and guidance gradients
//! see the true forward map.

mod train;

use thiserror::Error;

use crate::channel::{power_normalize, power_normalize_on_tape, ChannelError, ChannelSignal};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::numerics::{
    inverse_spd, singular_values, Matrix, Mlp, MlpError, NumericsError, SeededRng, Tape, Var,
};

pub use train::train_deepjscc;

/// Rank threshold for `Linear` encoders.
const MIN_SINGULAR_VALUE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("identity codec needs N = 2k (N = {n}, k = {k})")]
    IdentityShape { n: usize, k: usize },
    #[error("linear encoder is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("operation requires an MLP codec")]
    NotMlp,
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown codec kind tag {0}")]
    UnknownKind(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CodecKind {
    Identity,
    /// `encoder` is `2k × N`; `decoder` is `N × 2k`.
    Linear { encoder: Matrix, decoder: Matrix },
    Mlp { encoder: Mlp, decoder: Mlp },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    kind: CodecKind,
    n_source: usize,
    k_channel: usize,
    power: f64,
}

impl CodecModel {
    /// Identity encoder followed by power normalization; requires `N = 2k`.
    pub fn identity(n_source: usize) -> Result<Self, CodecError> {
        if n_source == 0 || n_source % 2 != 0 {
            return Err(CodecError::IdentityShape {
                n: n_source,
                k: n_source / 2,
            });
        }
        Ok(Self {
            kind: CodecKind::Identity,
            n_source,
            k_channel: n_source / 2,
            power: 1.0,
        })
    }

    /// Linear encoder `A` (`2k × N`) with the pseudo-inverse decoder `Aᵀ(AAᵀ)⁻¹`.
    pub fn linear(encoder: Matrix) -> Result<Self, CodecError> {
        check_full_row_rank(&encoder)?;
        let aat = encoder.matmul(&encoder.transpose())?;
        let decoder = encoder.transpose().matmul(&inverse_spd(&aat)?)?;
        Self::linear_with_decoder(encoder, decoder)
    }

    pub fn linear_with_decoder(encoder: Matrix, decoder: Matrix) -> Result<Self, CodecError> {
        if encoder.rows() % 2 != 0 {
            return Err(CodecError::DimensionMismatch {
                expected: encoder.rows() + 1,
                got: encoder.rows(),
            });
        }
        check_full_row_rank(&encoder)?;
        if decoder.shape() != (encoder.cols(), encoder.rows()) {
            return Err(CodecError::DimensionMismatch {
                expected: encoder.cols() * encoder.rows(),
                got: decoder.rows() * decoder.cols(),
            });
        }
        Ok(Self {
            n_source: encoder.cols(),
            k_channel: encoder.rows() / 2,
            kind: CodecKind::Linear { encoder, decoder },
            power: 1.0,
        })
    }

    /// Randomly initialized MLP pair: `[N, hidden, 2k]` and `[2k, hidden, N]`.
    pub fn mlp(n_source: usize, k_channel: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self, CodecError> {
        let encoder = Mlp::random(&[n_source, hidden, 2 * k_channel], rng)?;
        let decoder = Mlp::random(&[2 * k_channel, hidden, n_source], rng)?;
        Ok(Self {
            kind: CodecKind::Mlp { encoder, decoder },
            n_source,
            k_channel,
            power: 1.0,
        })
    }

    pub fn from_mlps(encoder: Mlp, decoder: Mlp) -> Result<Self, CodecError> {
        let n_source = encoder.input_dim();
        let two_k = encoder.output_dim();
        if two_k % 2 != 0 || decoder.input_dim() != two_k || decoder.output_dim() != n_source {
            return Err(CodecError::DimensionMismatch {
                expected: two_k,
                got: decoder.input_dim(),
            });
        }
        Ok(Self {
            kind: CodecKind::Mlp { encoder, decoder },
            n_source,
            k_channel: two_k / 2,
            power: 1.0,
        })
    }

    pub fn with_power(mut self, power: f64) -> Result<Self, CodecError> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(ChannelError::InvalidPower(power).into());
        }
        self.power = power;
        Ok(self)
    }

    pub fn kind(&self) -> &CodecKind {
        &self.kind
    }

    pub(crate) fn kind_mut(&mut self) -> &mut CodecKind {
        &mut self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            CodecKind::Identity => "identity",
            CodecKind::Linear { .. } => "linear",
            CodecKind::Mlp { .. } => "mlp",
        }
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn k_channel(&self) -> usize {
        self.k_channel
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<(), CodecError> {
        if got != expected {
            return Err(CodecError::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    /// Pre-normalization encoder output.
    fn raw_encode(&self, x: &[f64]) -> Result<Vec<f64>, CodecError> {
        Ok(match &self.kind {
            CodecKind::Identity => x.to_vec(),
            CodecKind::Linear { encoder, .. } => encoder.matvec(x)?,
            CodecKind::Mlp { encoder, .. } => encoder.forward(x),
        })
    }

    /// `z = E(x)`, power-normalized to `P` per symbol.
    pub fn encode(&self, x: &[f64]) -> Result<ChannelSignal, CodecError> {
        self.check_len(x.len(), self.n_source)?;
        let raw = self.raw_encode(x)?;
        Ok(power_normalize(&raw, self.k_channel, self.power)?)
    }

    /// `x̃ = D(ẑ)`.
    pub fn decode(&self, z_hat: &[f64]) -> Result<Vec<f64>, CodecError> {
        self.check_len(z_hat.len(), 2 * self.k_channel)?;
        Ok(match &self.kind {
            CodecKind::Identity => z_hat.to_vec(),
            CodecKind::Linear { decoder, .. } => decoder.matvec(z_hat)?,
            CodecKind::Mlp { decoder, .. } => decoder.forward(z_hat),
        })
    }

    /// Records the encoder (with normalization) on a tape; one sample per row.
    pub fn record_encode(&self, tape: &mut Tape, x: Var) -> Var {
        let raw = match &self.kind {
            CodecKind::Identity => x,
            CodecKind::Linear { encoder, .. } => {
                let at = tape.leaf(encoder.cols(), encoder.rows(), encoder.transpose().into_vec());
                tape.matmul(x, at)
            }
            CodecKind::Mlp { encoder, .. } => encoder.record(tape, x),
        };
        power_normalize_on_tape(tape, raw, self.k_channel, self.power)
    }

    /// Records the decoder on a tape; one signal per row.
    pub fn record_decode(&self, tape: &mut Tape, z: Var) -> Var {
        match &self.kind {
            CodecKind::Identity => z,
            CodecKind::Linear { decoder, .. } => {
                let dt = tape.leaf(decoder.cols(), decoder.rows(), decoder.transpose().into_vec());
                tape.matmul(z, dt)
            }
            CodecKind::Mlp { decoder, .. } => decoder.record(tape, z),
        }
    }

    /// `Jᵀ·cotangent` for the Jacobian `J` of [`CodecModel::encode`] at `x`.
    pub fn encoder_pullback(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>, CodecError> {
        self.check_len(x.len(), self.n_source)?;
        self.check_len(cotangent.len(), 2 * self.k_channel)?;
        let mut tape = Tape::new();
        let xv = tape.row_leaf(x);
        let z = self.record_encode(&mut tape, xv);
        let c = tape.leaf(cotangent.len(), 1, cotangent.to_vec());
        let out = tape.matmul(z, c);
        Ok(tape.backward(out)?.wrt(xv))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let tag = match self.kind {
            CodecKind::Identity => 0.0,
            CodecKind::Linear { .. } => 1.0,
            CodecKind::Mlp { .. } => 2.0,
        };
        ck.insert(
            "codec.meta",
            vec![4],
            vec![tag, self.n_source as f64, self.k_channel as f64, self.power],
        );
        match &self.kind {
            CodecKind::Identity => {}
            CodecKind::Linear { encoder, decoder } => {
                ck.insert("codec.linear.enc", vec![encoder.rows(), encoder.cols()], encoder.as_slice().to_vec());
                ck.insert("codec.linear.dec", vec![decoder.rows(), decoder.cols()], decoder.as_slice().to_vec());
            }
            CodecKind::Mlp { encoder, decoder } => {
                encoder.write_checkpoint(&mut ck, "codec.enc");
                decoder.write_checkpoint(&mut ck, "codec.dec");
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CodecError> {
        let meta = &ck.get("codec.meta")?.data;
        if meta.len() != 4 {
            return Err(CheckpointError::Malformed("codec.meta".into()).into());
        }
        let model = match meta[0] as u32 {
            0 => Self::identity(meta[1] as usize)?,
            1 => {
                let e = ck.get("codec.linear.enc")?;
                let d = ck.get("codec.linear.dec")?;
                let enc = Matrix::new(e.shape[0], e.shape[1], e.data.clone())?;
                let dec = Matrix::new(d.shape[0], d.shape[1], d.data.clone())?;
                Self::linear_with_decoder(enc, dec)?
            }
            2 => Self::from_mlps(
                Mlp::read_checkpoint(ck, "codec.enc")?,
                Mlp::read_checkpoint(ck, "codec.dec")?,
            )?,
            _ => return Err(CodecError::UnknownKind(meta[0])),
        };
        if model.n_source != meta[1] as usize || model.k_channel != meta[2] as usize {
            return Err(CheckpointError::Malformed("codec.meta dimensions".into()).into());
        }
        model.with_power(meta[3])
    }
}

fn check_full_row_rank(a: &Matrix) -> Result<(), CodecError> {
    if a.rows() > a.cols() {
        return Err(CodecError::RankDeficient(0.0));
    }
    let s = singular_values(a);
    let smin = s.last().copied().unwrap_or(0.0);
    if s.len() < a.rows() || smin <= MIN_SINGULAR_VALUE {
        return Err(CodecError::RankDeficient(smin));
    }
    Ok(())
}
