//! Training and decoding drivers: the batch-size-1 Adam/CTC loop over
//! utterances, input preparation for the raw-signal front end, and
//! hypothesis generation from a checkpoint.

use crate::corpus::Charset;
use crate::ctc::{beam_search_decode, ctc_loss, greedy_decode, required_length, CtcError, BLANK_ID};
use crate::io::{Checkpoint, InputNorm};
use crate::net::{
    adam_step, backward, clip_grad_norm, forward, init_params, NetError, NetworkConfig,
};
use crate::signal::MultiChannelSignal;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training examples")]
    NoExamples,
    #[error("every utterance was infeasible (too few frames) in epoch {0}")]
    AllSkipped(usize),
    #[error("transcript of '{id}' contains a character outside the charset")]
    CharsetMismatch { id: String },
    #[error("signal sample rate {0} Hz is not an integer multiple of {1} Hz")]
    BadDecimation(f64, f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

/// One prepared training/decoding example: network input plus label ids.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub transcript: String,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Optional global max-norm gradient clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            seed: 0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(50.0),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean loss per epoch in nats per reference character, over the
    /// utterances that were actually trained on.
    pub epoch_losses: Vec<f64>,
    /// Infeasible utterances skipped per epoch (constant across epochs).
    pub skipped_per_epoch: usize,
}

/// Builds examples from per-utterance feature matrices and transcripts.
pub fn make_examples(
    items: &[(String, Array2<f64>, String)],
    charset: &Charset,
) -> Result<Vec<Example>, TrainError> {
    items
        .iter()
        .map(|(id, features, transcript)| {
            let labels = charset
                .encode(transcript)
                .ok_or_else(|| TrainError::CharsetMismatch { id: id.clone() })?;
            Ok(Example {
                id: id.clone(),
                features: features.clone(),
                labels,
                transcript: transcript.clone(),
            })
        })
        .collect()
}

/// The sequential batch-size-1 training loop: one forward/CTC/backward/Adam
/// step per utterance per epoch. Deterministic in (examples, configs, seed).
pub fn train(
    examples: &[Example],
    net_config: &NetworkConfig,
    charset: &Charset,
    train_config: &TrainConfig,
    input_norm: Option<InputNorm>,
    mut progress: impl FnMut(usize, f64, usize),
) -> Result<TrainOutcome, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut params = init_params(net_config, train_config.seed)?;
    let mut epoch_losses = Vec::with_capacity(train_config.epochs);
    let mut skipped_per_epoch = 0;
    for epoch in 0..train_config.epochs {
        let mut loss_sum = 0.0;
        let mut char_count = 0usize;
        let mut trained = 0usize;
        let mut skipped = 0usize;
        for ex in examples {
            let trace = forward(&params.weights, net_config, &ex.features)?;
            if trace.logits.nrows() < required_length(&ex.labels) {
                skipped += 1;
                continue;
            }
            let ctc = ctc_loss(&trace.logits, &ex.labels, BLANK_ID)?;
            let mut grads = backward(&params.weights, net_config, &trace, &ctc.logit_grad)?;
            if let Some(max_norm) = train_config.clip_norm {
                clip_grad_norm(&mut grads, max_norm);
            }
            adam_step(
                &mut params,
                &grads,
                train_config.learning_rate,
                train_config.beta1,
                train_config.beta2,
                train_config.epsilon,
            );
            loss_sum += ctc.loss;
            char_count += ex.labels.len();
            trained += 1;
        }
        if trained == 0 {
            return Err(TrainError::AllSkipped(epoch + 1));
        }
        skipped_per_epoch = skipped;
        let mean = loss_sum / char_count.max(1) as f64;
        epoch_losses.push(mean);
        progress(epoch + 1, mean, skipped);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: *net_config,
            charset: charset.clone(),
            params,
            input_norm,
        },
        epoch_losses,
        skipped_per_epoch,
    })
}

/// Decodes one prepared input with the checkpointed model; beam width 1 is
/// exactly greedy decoding.
pub fn decode_example(
    checkpoint: &Checkpoint,
    features: &Array2<f64>,
    beam_width: usize,
) -> Result<String, TrainError> {
    let trace = forward(&checkpoint.params.weights, &checkpoint.config, features)?;
    let ids = if beam_width <= 1 {
        greedy_decode(&trace.logits, BLANK_ID)
    } else {
        beam_search_decode(&trace.logits, BLANK_ID, beam_width)
    };
    Ok(checkpoint
        .charset
        .decode(&ids)
        .expect("decoder ids lie in the charset by construction"))
}

/// Network frame rate for the raw front end; matches the feature-bank rate
/// so corpus sizes are comparable across input modes.
pub const RAW_FRAME_RATE_HZ: f64 = 100.0;

/// Integer-factor decimation of a preprocessed signal down to 100 Hz,
/// transposed to the network's `[T x channels]` layout.
pub fn decimate_for_net(signal: &MultiChannelSignal) -> Result<Array2<f64>, TrainError> {
    let ratio = signal.sample_rate_hz / RAW_FRAME_RATE_HZ;
    let step = ratio.round() as usize;
    if step == 0 || (ratio - step as f64).abs() > 1e-9 {
        return Err(TrainError::BadDecimation(
            signal.sample_rate_hz,
            RAW_FRAME_RATE_HZ,
        ));
    }
    let channels = signal.samples.nrows();
    let t_out = signal.samples.ncols().div_ceil(step);
    Ok(Array2::from_shape_fn((t_out, channels), |(t, c)| {
        signal.samples[(c, t * step)]
    }))
}

const NORM_STD_FLOOR: f64 = 1e-12;

/// Per-dimension mean/std over all rows of the training inputs.
pub fn fit_input_norm(inputs: &[Array2<f64>]) -> Option<InputNorm> {
    let dim = inputs.first()?.ncols();
    let total_rows: usize = inputs.iter().map(|m| m.nrows()).sum();
    if total_rows == 0 {
        return None;
    }
    let mut mean = vec![0.0; dim];
    for m in inputs {
        for row in m.rows() {
            for (acc, &v) in mean.iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= total_rows as f64;
    }
    let mut var = vec![0.0; dim];
    for m in inputs {
        for row in m.rows() {
            for ((acc, &mu), &v) in var.iter_mut().zip(&mean).zip(row.iter()) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let std = var
        .iter()
        .map(|&v| {
            let s = (v / total_rows as f64).sqrt();
            if s < NORM_STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    Some(InputNorm { mean, std })
}

pub fn apply_input_norm(input: &mut Array2<f64>, norm: &InputNorm) {
    for mut row in input.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - norm.mean[j]) / norm.std[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Charset;

    fn toy_examples(charset: &Charset) -> Vec<Example> {
        // Two utterances with linearly separable feature patterns.
        let items: Vec<(String, Array2<f64>, String)> = vec![
            (
                "u1".into(),
                Array2::from_shape_fn((8, 2), |(t, d)| if d == 0 { (t as f64 * 0.7).sin() } else { 0.2 }),
                "ab".into(),
            ),
            (
                "u2".into(),
                Array2::from_shape_fn((8, 2), |(t, d)| if d == 1 { (t as f64 * 0.5).cos() } else { -0.3 }),
                "ba".into(),
            ),
        ];
        make_examples(&items, charset).unwrap()
    }

    fn toy_net() -> NetworkConfig {
        NetworkConfig::new(2, 6, 1, 3)
    }

    #[test]
    fn make_examples_rejects_out_of_charset() {
        let charset = Charset::from_chars("ab".chars());
        let items = vec![("u1".to_string(), Array2::zeros((4, 2)), "ax".to_string())];
        assert!(matches!(
            make_examples(&items, &charset),
            Err(TrainError::CharsetMismatch { .. })
        ));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let charset = Charset::from_chars("ab".chars());
        let examples = toy_examples(&charset);
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        assert_eq!(out.checkpoint.params, init_params(&cfg, 5).unwrap());
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let charset = Charset::from_chars("ab".chars());
        let examples = toy_examples(&charset);
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 60,
            seed: 1,
            ..TrainConfig::default()
        };
        let a = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        let b = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        let first = a.epoch_losses[0];
        let last = *a.epoch_losses.last().unwrap();
        assert!(last < first, "loss should decrease: {first} -> {last}");
    }

    #[test]
    fn infeasible_utterances_are_skipped_and_counted() {
        let charset = Charset::from_chars("ab".chars());
        let mut examples = toy_examples(&charset);
        examples.push(Example {
            id: "short".into(),
            features: Array2::zeros((1, 2)),
            labels: vec![1, 1], // requires 3 frames
            transcript: "aa".into(),
        });
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        assert_eq!(out.skipped_per_epoch, 1);
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let charset = Charset::from_chars("ab".chars());
        let examples = vec![Example {
            id: "short".into(),
            features: Array2::zeros((1, 2)),
            labels: vec![1, 1],
            transcript: "aa".into(),
        }];
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}),
            Err(TrainError::AllSkipped(1))
        ));
    }

    #[test]
    fn overfit_two_utterances_to_zero_cer() {
        let charset = Charset::from_chars("ab".chars());
        let examples = toy_examples(&charset);
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 250,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        for ex in &examples {
            let hyp = decode_example(&out.checkpoint, &ex.features, 8).unwrap();
            assert_eq!(hyp, ex.transcript, "{}", ex.id);
        }
    }

    #[test]
    fn beam_width_one_is_exactly_greedy() {
        let charset = Charset::from_chars("ab".chars());
        let examples = toy_examples(&charset);
        let cfg = toy_net();
        let tc = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let out = train(&examples, &cfg, &charset, &tc, None, |_, _, _| {}).unwrap();
        let trace = forward(
            &out.checkpoint.params.weights,
            &out.checkpoint.config,
            &examples[0].features,
        )
        .unwrap();
        let greedy = charset
            .decode(&greedy_decode(&trace.logits, BLANK_ID))
            .unwrap();
        let beam1 = decode_example(&out.checkpoint, &examples[0].features, 1).unwrap();
        assert_eq!(greedy, beam1);
    }

    #[test]
    fn decimation_takes_every_tenth_sample() {
        let samples = Array2::from_shape_fn((2, 100), |(c, t)| (c * 1000 + t) as f64);
        let sig = MultiChannelSignal::new(samples, 1000.0, vec!["a".into(), "b".into()]).unwrap();
        let out = decimate_for_net(&sig).unwrap();
        assert_eq!(out.nrows(), 10);
        assert_eq!(out.ncols(), 2);
        assert_eq!(out[(0, 0)], 0.0);
        assert_eq!(out[(1, 0)], 10.0);
        assert_eq!(out[(3, 1)], 1030.0);
    }

    #[test]
    fn decimation_rejects_non_integer_ratio() {
        let sig =
            MultiChannelSignal::new(Array2::zeros((1, 50)), 250.5, vec!["a".into()]).unwrap();
        assert!(matches!(
            decimate_for_net(&sig),
            Err(TrainError::BadDecimation(_, _))
        ));
    }

    #[test]
    fn input_norm_standardizes_training_data() {
        let a = Array2::from_shape_fn((10, 2), |(t, d)| t as f64 * (d + 1) as f64);
        let b = Array2::from_shape_fn((6, 2), |(t, d)| -(t as f64) + d as f64);
        let norm = fit_input_norm(&[a.clone(), b.clone()]).unwrap();
        let mut all = Vec::new();
        for mut m in [a, b] {
            apply_input_norm(&mut m, &norm);
            all.push(m);
        }
        for d in 0..2 {
            let vals: Vec<f64> = all.iter().flat_map(|m| m.column(d).to_vec()).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn input_norm_constant_dim_uses_unit_std() {
        let a = Array2::ones((5, 1));
        let norm = fit_input_norm(&[a]).unwrap();
        assert_eq!(norm.std[0], 1.0);
    }
}
