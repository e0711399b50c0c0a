use super::{DiffusionError, NoiseSchedule, ScoreFunction, ScoreNet};
use crate::numerics::{OptimizerState, SeededRng, Tape, TrainConfig, TrainReport};

const INIT_STREAM: u64 = 0x5C0E;
const TRAIN_STREAM: u64 = 0x5C0F;

/// Denoising score matching for a fresh `[dim + 16, 64, 64, dim]` network.
pub fn train_score(
    dataset: &[Vec<f64>],
    s: &NoiseSchedule,
    tc: &TrainConfig,
) -> Result<(ScoreFunction, TrainReport), DiffusionError> {
    let dim = dataset.first().ok_or(DiffusionError::EmptyDataset)?.len();
    let net = ScoreNet::new(dim, s.steps(), &mut SeededRng::new(tc.seed, INIT_STREAM))?;
    let (net, report) = train_score_net(net, dataset, s, tc)?;
    Ok((ScoreFunction::TrainedMlp(net), report))
}

/// Trains `net` on `‖ε_θ(x_i, i) − ε‖²` with `i` uniform on `1..=T` and a
/// fresh `(i, ε)` per sample per epoch.
pub fn train_score_net(
    mut net: ScoreNet,
    dataset: &[Vec<f64>],
    s: &NoiseSchedule,
    tc: &TrainConfig,
) -> Result<(ScoreNet, TrainReport), DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let d = net.dim();
    if let Some(bad) = dataset.iter().find(|x| x.len() != d) {
        return Err(DiffusionError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let mut opt = OptimizerState::new(tc.optimizer, tc.learning_rate, &net.mlp().param_sizes());
    let mut rng = SeededRng::new(tc.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..tc.epochs {
        rng.shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(tc.batch_size.max(1)) {
            let b = chunk.len();
            let steps: Vec<usize> = (0..b).map(|_| rng.int_inclusive(1, s.steps())).collect();
            let eps: Vec<f64> = (0..b * d).map(|_| rng.standard_normal()).collect();
            let mut noisy = Vec::with_capacity(b * d);
            for (r, &idx) in chunk.iter().enumerate() {
                let ab = s.alpha_bar(steps[r]);
                let (a, c) = (ab.sqrt(), (1.0 - ab).sqrt());
                for j in 0..d {
                    noisy.push(a * dataset[idx][j] + c * eps[r * d + j]);
                }
            }
            let mut tape = Tape::new();
            let x = tape.leaf(b, d, noisy);
            let target = tape.leaf(b, d, eps);
            let bound = net.mlp().bind(&mut tape);
            let pred = net.record_eps_with(&mut tape, &bound, x, &steps);
            let diff = tape.sub(pred, target);
            let sq = tape.sum_sq(diff);
            let loss = tape.scale(sq, 1.0 / (b * d) as f64);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(DiffusionError::NonFiniteLoss(epoch));
            }
            total += value * b as f64;
            count += b;
            let grads = tape.backward(loss)?;
            let g: Vec<Vec<f64>> = bound.leaves().into_iter().map(|v| grads.wrt(v)).collect();
            let mut params = net.mlp().params();
            opt.update(&mut params, &g);
            net.mlp_mut().set_params(&params);
        }
        report.epoch_losses.push(total / count as f64);
    }
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_linear_schedule;

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let s = make_linear_schedule(50, 1e-3, 0.2).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let data: Vec<Vec<f64>> = (0..32).map(|_| rng.normal_vec(2)).collect();
        let net = ScoreNet::new(2, 50, &mut rng).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (trained, _) = train_score_net(net.clone(), &data, &s, &tc).unwrap();
        assert_eq!(trained, net);
    }

    #[test]
    fn rejects_empty_and_divergence() {
        let s = make_linear_schedule(50, 1e-3, 0.2).unwrap();
        assert!(matches!(
            train_score(&[], &s, &TrainConfig::default()),
            Err(DiffusionError::EmptyDataset)
        ));
        let data = vec![vec![1.0, -1.0]; 16];
        let tc = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            batch_size: 8,
            optimizer: crate::numerics::Optimizer::Sgd,
            seed: 0,
        };
        assert!(matches!(train_score(&data, &s, &tc), Err(DiffusionError::NonFiniteLoss(_))));
    }

    #[test]
    fn loss_decreases_on_standard_normal_data() {
        let s = make_linear_schedule(200, 1e-4, 0.05).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let data: Vec<Vec<f64>> = (0..512).map(|_| rng.normal_vec(2)).collect();
        let tc = TrainConfig {
            learning_rate: 3e-3,
            epochs: 30,
            batch_size: 64,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, report) = train_score(&data, &s, &tc).unwrap();
        assert!(report.last() <= report.first());
        assert!(report.trailing_mean(30, 5) <= report.trailing_mean(10, 5));
    }
}
