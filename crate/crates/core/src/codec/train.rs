use super::{CodecError, CodecKind, CodecModel};
use crate::channel::{snr_to_noise_variance, ChannelConfig};
use crate::numerics::{OptimizerState, SeededRng, Tape, TrainConfig, TrainReport};

/// Stream id reserved for codec training noise and shuffling.
const TRAIN_STREAM: u64 = 0xC0DE;

/// End-to-end MSE training of an MLP codec through the noisy channel.
///
/// Channel noise is redrawn for every minibatch. The loss is the mean
/// squared error per source coordinate.
pub fn train_deepjscc(
    model: &CodecModel,
    dataset: &[Vec<f64>],
    channel: &ChannelConfig,
    tc: &TrainConfig,
) -> Result<(CodecModel, TrainReport), CodecError> {
    if dataset.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    let n = model.n_source();
    if let Some(bad) = dataset.iter().find(|x| x.len() != n) {
        return Err(CodecError::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let CodecKind::Mlp { encoder, decoder } = model.kind() else {
        return Err(CodecError::NotMlp);
    };
    let mut encoder = encoder.clone();
    let mut decoder = decoder.clone();
    let enc_sizes = encoder.param_sizes();
    let n_enc = enc_sizes.len();
    let mut sizes = enc_sizes;
    sizes.extend(decoder.param_sizes());
    let mut opt = OptimizerState::new(tc.optimizer, tc.learning_rate, &sizes);
    let mut rng = SeededRng::new(tc.seed, TRAIN_STREAM);
    let noise_sd = (snr_to_noise_variance(channel) / 2.0).sqrt();
    let two_k = 2 * model.k_channel();
    let batch = tc.batch_size.max(1);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..tc.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(batch) {
            let b = chunk.len();
            let mut tape = Tape::new();
            let flat: Vec<f64> = chunk.iter().flat_map(|&i| dataset[i].iter().copied()).collect();
            let x = tape.leaf(b, n, flat);
            let enc = encoder.bind(&mut tape);
            let dec = decoder.bind(&mut tape);
            let raw = enc.forward(&mut tape, x);
            let z = crate::channel::power_normalize_on_tape(&mut tape, raw, model.k_channel(), model.power());
            let noise = tape.leaf(b, two_k, (0..b * two_k).map(|_| noise_sd * rng.standard_normal()).collect());
            let z_hat = tape.add(z, noise);
            let x_rec = dec.forward(&mut tape, z_hat);
            let diff = tape.sub(x_rec, x);
            let sq = tape.sum_sq(diff);
            let loss = tape.scale(sq, 1.0 / (b * n) as f64);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(CodecError::NonFiniteLoss(epoch));
            }
            total += value * b as f64;
            count += b;
            let grads = tape.backward(loss)?;
            let g: Vec<Vec<f64>> = enc
                .leaves()
                .into_iter()
                .chain(dec.leaves())
                .map(|v| grads.wrt(v))
                .collect();
            let mut params = encoder.params();
            params.extend(decoder.params());
            opt.update(&mut params, &g);
            encoder.set_params(&params[..n_enc]);
            decoder.set_params(&params[n_enc..]);
        }
        report.epoch_losses.push(total / count as f64);
    }
    let mut trained = model.clone();
    *trained.kind_mut() = CodecKind::Mlp { encoder, decoder };
    Ok((trained, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse_psnr;

    fn gmm_points(n: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { -1.5 } else { 1.5 };
                vec![c + 0.3 * rng.standard_normal(), 0.3 * rng.standard_normal()]
            })
            .collect()
    }

    fn mean_mse(m: &CodecModel, data: &[Vec<f64>]) -> f64 {
        data.iter()
            .map(|x| {
                let z = m.encode(x).unwrap();
                mse_psnr(x, &m.decode(z.values()).unwrap(), 1.0).unwrap().0
            })
            .sum::<f64>()
            / data.len() as f64
    }

    #[test]
    fn memorizes_a_single_point() {
        let mut rng = SeededRng::new(1, 0);
        let model = CodecModel::mlp(2, 1, 32, &mut rng).unwrap();
        let data = vec![vec![0.5, -0.3]; 64];
        let tc = TrainConfig {
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, _) = train_deepjscc(&model, &data, &ChannelConfig::noiseless(), &tc).unwrap();
        assert!(mean_mse(&trained, &data[..1]) < 1e-3);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = SeededRng::new(1, 0);
        let model = CodecModel::mlp(2, 1, 8, &mut rng).unwrap();
        let data = gmm_points(20, &mut rng);
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (trained, _) = train_deepjscc(&model, &data, &ChannelConfig::with_snr(1.0), &tc).unwrap();
        assert_eq!(trained, model);
    }

    #[test]
    fn rejects_non_mlp_and_empty() {
        let id = CodecModel::identity(2).unwrap();
        let tc = TrainConfig::default();
        assert!(matches!(
            train_deepjscc(&id, &[vec![1.0, 0.0]], &ChannelConfig::noiseless(), &tc),
            Err(CodecError::NotMlp)
        ));
        let mut rng = SeededRng::new(1, 0);
        let m = CodecModel::mlp(2, 1, 8, &mut rng).unwrap();
        assert!(matches!(
            train_deepjscc(&m, &[], &ChannelConfig::noiseless(), &tc),
            Err(CodecError::EmptyDataset)
        ));
    }

    #[test]
    fn divergent_learning_rate_reports_non_finite_loss() {
        let mut rng = SeededRng::new(1, 0);
        let model = CodecModel::mlp(2, 1, 8, &mut rng).unwrap();
        let data: Vec<Vec<f64>> = (0..32).map(|i| vec![1e200 * (i as f64 + 1.0), 1.0]).collect();
        let tc = TrainConfig {
            learning_rate: 1e3,
            epochs: 5,
            batch_size: 8,
            optimizer: crate::numerics::Optimizer::Sgd,
            seed: 0,
        };
        assert!(matches!(
            train_deepjscc(&model, &data, &ChannelConfig::noiseless(), &tc),
            Err(CodecError::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn gmm_training_makes_progress_at_one_db() {
        let mut rng = SeededRng::new(9, 0);
        let model = CodecModel::mlp(2, 1, 32, &mut rng).unwrap();
        let data = gmm_points(256, &mut rng);
        let before = mean_mse(&model, &data);
        let tc = TrainConfig {
            learning_rate: 3e-3,
            epochs: 200,
            batch_size: 64,
            seed: 4,
            ..TrainConfig::default()
        };
        let (trained, report) = train_deepjscc(&model, &data, &ChannelConfig::with_snr(1.0), &tc).unwrap();
        assert!(report.last() < report.first());
        // noiseless reconstruction after training beats the untrained codec
        assert!(mean_mse(&trained, &data) < before);
    }
}
