//! Posterior sampling receivers for noisy-channel joint source-channel coding.
//!
//! A learned or linear codec maps a source vector to a power-normalized
//! channel signal. The receiver reconstructs the source with a diffusion
//! prior guided by the received signal in both the latent and source domains.

pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod diffusion;
pub mod gaussian_oracle;
pub mod guidance;
pub mod metrics;
pub mod numerics;
