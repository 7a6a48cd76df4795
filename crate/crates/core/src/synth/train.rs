use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::LearningProblem;
use crate::decode::{hard_accuracy_tokens, soft_accuracy_tokens};
use crate::embeddings::{lookup_examples, EmbeddingTable};
use crate::error::{Error, Result};
use crate::tensor::{clip_gradients, Adam, Graph, Tensor};
use crate::vocab::Vocabulary;

use super::{ExampleSet, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub inputs: ExampleSet,
    /// Target token ids padded to the output length.
    pub target: Vec<usize>,
}

/// Looks up example embeddings and tokenizes targets. Problems without a
/// target expression are rejected.
pub fn prepare_examples(
    problems: &[LearningProblem],
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    length: usize,
) -> Result<Vec<TrainingExample>> {
    problems
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let target = p
                .target
                .as_ref()
                .ok_or_else(|| Error::Data(format!("training problem {i} has no target expression")))?;
            let (positives, negatives) = lookup_examples(table, p)?;
            Ok(TrainingExample {
                inputs: ExampleSet { positives, negatives },
                target: vocab.tokenize_padded(target, length)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Maximum global gradient norm.
    pub clip: f64,
    pub seed: u64,
    /// Stop once an epoch's hard accuracy reaches this value.
    pub stop_at_hard_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 256,
            lr: 3e-4,
            clip: 5.0,
            seed: 0,
            stop_at_hard_accuracy: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub soft_acc: f64,
    pub hard_acc: f64,
}

fn strip_pad(ids: &[usize], pad: usize) -> &[usize] {
    let end = ids.iter().position(|&i| i == pad).unwrap_or(ids.len());
    &ids[..end]
}

/// Summed soft and hard token accuracy of each score row against its target;
/// both sides are cut at their first PAD.
pub fn score_batch(scores: &Tensor, targets: &[&[usize]], classes: usize, length: usize) -> (f64, f64) {
    let pad = classes - 1;
    let mut soft = 0.0;
    let mut hard = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let row = scores.row(i);
        let predicted: Vec<usize> = (0..length)
            .map(|j| {
                let mut best = 0;
                for c in 1..classes {
                    if row[c * length + j] > row[best * length + j] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        let (t, p) = (strip_pad(target, pad), strip_pad(&predicted, pad));
        soft += soft_accuracy_tokens(t, p);
        hard += hard_accuracy_tokens(t, p);
    }
    (soft, hard)
}

/// Minibatch Adam with gradient clipping. Metrics of an epoch average the
/// per-batch values seen during that epoch.
pub fn train(
    model: &mut Model,
    data: &[TrainingExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if data.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let (classes, length) = (model.config().num_tokens, model.config().length);
    if let Some(bad) = data.iter().find(|e| e.target.len() != length) {
        return Err(Error::InvalidArgument(format!(
            "target of length {} does not match the model output length {length}",
            bad.target.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    model.params.zero_grad();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut soft_sum, mut hard_sum) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<ExampleSet> = chunk.iter().map(|&i| data[i].inputs.clone()).collect();
            let targets: Vec<&[usize]> = chunk.iter().map(|&i| data[i].target.as_slice()).collect();
            let flat: Vec<usize> = targets.concat();

            let mut g = Graph::new();
            let fwd = model.forward(&mut g, &inputs, true)?;
            let loss = g.cross_entropy(fwd.scores, &flat, classes, length)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss is {value} at epoch {epoch}, batch {b}")));
            }
            let (soft, hard) = score_batch(g.value(fwd.scores), &targets, classes, length);
            g.backward(loss, &mut model.params)?;
            model.commit(&fwd);
            clip_gradients(&mut model.params, config.clip);
            adam.step(&mut model.params)
                .map_err(|e| Error::Numeric(format!("{e} at epoch {epoch}, batch {b}")))?;

            loss_sum += value * chunk.len() as f64;
            soft_sum += soft;
            hard_sum += hard;
        }
        let n = data.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / n,
            soft_acc: soft_sum / n,
            hard_acc: hard_sum / n,
        };
        info!(
            "epoch {epoch}: loss {:.6} soft {:.4} hard {:.4}",
            metrics.loss, metrics.soft_acc, metrics.hard_acc
        );
        on_epoch(&metrics);
        history.push(metrics);
        if config.stop_at_hard_accuracy.is_some_and(|t| metrics.hard_acc >= t) {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::blocks::uniform;
    use crate::synth::{Architecture, ModelConfig};

    fn toy(arch: Architecture) -> (Model, Vec<TrainingExample>) {
        let cfg = ModelConfig {
            hidden: 8,
            inducing_points: 4,
            ..ModelConfig::new(arch, 4, 3, 6)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ex = TrainingExample {
            inputs: ExampleSet {
                positives: uniform(&mut rng, 2, 4, 1.0),
                negatives: uniform(&mut rng, 3, 4, 1.0),
            },
            target: vec![1, 3, 5],
        };
        (Model::new(cfg, 5).unwrap(), vec![ex])
    }

    #[test]
    fn one_problem_loss_decreases() {
        for arch in Architecture::ALL {
            let (mut model, data) = toy(arch);
            let cfg = TrainConfig {
                epochs: 50,
                lr: 1e-2,
                ..Default::default()
            };
            let hist = train(&mut model, &data, &cfg, |_| {}).unwrap();
            assert_eq!(hist.len(), 50);
            assert!(hist[49].loss < hist[0].loss, "{arch}: {:?}", (hist[0].loss, hist[49].loss));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let run = || {
            let (mut model, data) = toy(Architecture::SetTransformer);
            let cfg = TrainConfig {
                epochs: 5,
                ..Default::default()
            };
            train(&mut model, &data, &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |h: &[EpochMetrics]| h.iter().map(|m| m.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn mismatched_target_length_rejected() {
        let (mut model, mut data) = toy(Architecture::Gru);
        data[0].target.push(0);
        assert!(train(&mut model, &data, &TrainConfig::default(), |_| {}).is_err());
    }

    #[test]
    fn perfect_scores_give_full_accuracy() {
        // C = 3 (PAD = 2), L = 2, target [1, PAD].
        let scores = Tensor::from_vec(1, 6, vec![0.0, 0.0, 5.0, 0.0, 0.0, 5.0]).unwrap();
        let target: &[usize] = &[1, 2];
        assert_eq!(score_batch(&scores, &[target], 3, 2), (1.0, 1.0));
    }
}
