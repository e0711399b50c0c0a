use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Optimizer, SeededRng, Tape, Var};
use crate::checkpoint::{Checkpoint, CheckpointError};

/// Fully connected network with tanh hidden layers and a linear output.
///
/// Weights are stored `in × out` so that a batch `X` (one sample per row)
/// maps to `X·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Parameter leaves of an [`Mlp`] placed on a particular tape.
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.vars.len() - 1;
        for (i, &(w, b)) in self.vars.iter().enumerate() {
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if i != last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Parameter leaves in `[w0, b0, w1, b1, ...]` order.
    pub fn leaves(&self) -> Vec<Var> {
        self.vars.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("network needs at least an input and an output width")]
    TooShallow,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint array `{0}` has the wrong shape")]
    Shape(String),
}

impl Mlp {
    /// Xavier-normal weights and zero biases.
    pub fn random(widths: &[usize], rng: &mut SeededRng) -> Result<Self, MlpError> {
        if widths.len() < 2 {
            return Err(MlpError::TooShallow);
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    fan_in,
                    fan_out,
                    weight: (0..fan_in * fan_out).map(|_| sd * rng.standard_normal()).collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in];
        w.extend(self.layers.iter().map(|l| l.fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.leaf(l.fan_in, l.fan_out, l.weight.clone());
                let b = tape.leaf(1, l.fan_out, l.bias.clone());
                (w, b)
            })
            .collect();
        BoundMlp { vars }
    }

    /// Records the network with its current weights as tape constants.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Var {
        self.bind(tape).forward(tape, x)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.row_leaf(x);
        let out = self.record(&mut tape, v);
        tape.value(out).to_vec()
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn set_params(&mut self, params: &[Vec<f64>]) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.weight.copy_from_slice(&params[2 * i]);
            l.bias.copy_from_slice(&params[2 * i + 1]);
        }
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            ckpt.insert(format!("{prefix}.{i}.w"), vec![l.fan_in, l.fan_out], l.weight.clone());
            ckpt.insert(format!("{prefix}.{i}.b"), vec![l.fan_out], l.bias.clone());
        }
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self, MlpError> {
        let mut layers = Vec::new();
        for i in 0.. {
            let wname = format!("{prefix}.{i}.w");
            if !ckpt.contains(&wname) {
                break;
            }
            let w = ckpt.get(&wname)?;
            let b = ckpt.get(&format!("{prefix}.{i}.b"))?;
            if w.shape.len() != 2 || b.shape != [w.shape[1]] {
                return Err(MlpError::Shape(wname));
            }
            layers.push(Dense {
                fan_in: w.shape[0],
                fan_out: w.shape[1],
                weight: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        if layers.is_empty() {
            return Err(CheckpointError::Missing(format!("{prefix}.0.w")).into());
        }
        if layers.windows(2).any(|p| p[0].fan_out != p[1].fan_in) {
            return Err(MlpError::Shape(prefix.to_string()));
        }
        Ok(Self { layers })
    }
}

/// Minibatch training settings shared by codec and score-network training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

/// Per-epoch mean training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first(&self) -> f64 {
        self.epoch_losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean over a window of `w` epochs ending at epoch `end` (exclusive).
    pub fn trailing_mean(&self, end: usize, w: usize) -> f64 {
        let start = end.saturating_sub(w);
        let s = &self.epoch_losses[start..end];
        s.iter().sum::<f64>() / s.len() as f64
    }
}
