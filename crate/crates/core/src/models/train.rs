use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use viewadapt_tensor::{softmax_rows, Scalar, Tape};

use super::Classifier;
use crate::error::{Error, Result};
use crate::geometry::{random_rotation_augment_with_rng, AugmentRange};
use crate::nn::{clip_gradients, AdamState, ForwardCtx};
use crate::skeleton::SkeletonSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Sequence-level rotation augmentation; `None` trains on the data as is.
    pub augment: Option<AugmentRange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            augment: None,
        }
    }
}

/// Summary of one training epoch, measured on the training batches as they
/// were seen (augmented, with dropout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean gradient scale applied by clipping (1 when never clipped).
    pub clip_scale: f64,
}

/// Optimizer state plus the position in the deterministic data schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub optimizer: AdamState<T>,
    /// Epochs completed so far.
    pub epoch: usize,
    pub config: TrainConfig,
}

fn check_labels(labels: impl IntoIterator<Item = usize>, classes: usize) -> Result<()> {
    for l in labels {
        if l >= classes {
            return Err(Error::Schema(format!(
                "label {l} outside the model's {classes} classes"
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Trainer<T> {
    pub fn new<M: Classifier<T>>(model: &M, config: TrainConfig) -> Result<Self> {
        if let Some(r) = &config.augment {
            r.validate()?;
        }
        Ok(Self {
            optimizer: AdamState::new(model.optimizer(), &model.params()),
            epoch: 0,
            config,
        })
    }

    /// Data order, augmentation and dropout for an epoch all derive from
    /// `(seed, epoch)`.
    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1000 + self.epoch as u64);
        rng
    }

    pub fn run_epoch<M: Classifier<T>>(
        &mut self,
        model: &mut M,
        data: &[SkeletonSequence],
    ) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        check_labels(data.iter().map(|s| s.label), model.num_classes())?;
        let mut rng = self.epoch_rng();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut scale_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(model.batch_size()) {
            let augmented: Vec<SkeletonSequence> = match &self.config.augment {
                Some(range) if !range.is_identity() => chunk
                    .iter()
                    .map(|&i| random_rotation_augment_with_rng(&data[i], range, &mut rng))
                    .collect::<Result<_>>()?,
                _ => chunk.iter().map(|&i| data[i].clone()).collect(),
            };
            let refs: Vec<&SkeletonSequence> = augmented.iter().collect();
            let batch = model.prepare(&refs)?;
            let labels = model.labels(&batch).to_vec();
            let mut ctx = ForwardCtx::train(rng.random());
            let tape = Tape::new();
            let logits = model.logits(&tape, &batch, &mut ctx)?;
            let loss = logits.softmax_cross_entropy(&labels)?;
            let loss_value = loss.item()?.as_f64();
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {}",
                    self.epoch + 1
                )));
            }
            tape.backward(loss)?;
            model.zero_grad();
            model.collect_grads(&tape)?;
            model.absorb_moments(&ctx.take_moments())?;
            let scale = match model.clip_norm() {
                Some(c) => clip_gradients(&mut model.params_mut(), c),
                None => 1.0,
            };
            self.optimizer.update(&mut model.params_mut())?;
            let pred = argmax_rows(&logits.value().to_f64_vec(), model.num_classes());
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            loss_sum += loss_value * labels.len() as f64;
            scale_sum += scale;
            batches += 1;
        }
        self.epoch += 1;
        let log = EpochLog {
            epoch: self.epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            clip_scale: scale_sum / batches as f64,
        };
        log::info!(
            "epoch {} loss {:.6} train_acc {:.4} clip {:.4}",
            log.epoch,
            log.loss,
            log.accuracy,
            log.clip_scale
        );
        Ok(log)
    }
}

/// Trains for `config.epochs` epochs from a fresh optimizer.
pub fn train<T: Scalar, M: Classifier<T>>(
    model: &mut M,
    data: &[SkeletonSequence],
    config: &TrainConfig,
) -> Result<(Trainer<T>, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let logs = (0..config.epochs)
        .map(|_| trainer.run_epoch(model, data))
        .collect::<Result<_>>()?;
    Ok((trainer, logs))
}

fn argmax_rows(values: &[f64], classes: usize) -> Vec<usize> {
    values
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Class probabilities for every sequence, in evaluation mode.
pub fn predict_proba<T: Scalar, M: Classifier<T>>(
    model: &M,
    data: &[SkeletonSequence],
) -> Result<Vec<Vec<f64>>> {
    let c = model.num_classes();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(model.batch_size()) {
        let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
        let batch = model.prepare(&refs)?;
        let tape = Tape::new();
        let logits = model.logits(&tape, &batch, &mut ForwardCtx::eval())?;
        let probs = softmax_rows(&logits.value())?.to_f64_vec();
        out.extend(probs.chunks(c).map(|r| r.to_vec()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the data.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn from_probabilities(
        probabilities: Vec<Vec<f64>>,
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if probabilities.len() != labels.len() {
            return Err(Error::invalid("one probability row per label is required"));
        }
        check_labels(labels.iter().copied(), classes)?;
        let predictions: Vec<usize> = probabilities
            .iter()
            .flat_map(|p| argmax_rows(p, classes))
            .collect();
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&l, &p) in labels.iter().zip(&predictions) {
            confusion[l][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            accuracy: if labels.is_empty() {
                0.0
            } else {
                correct as f64 / labels.len() as f64
            },
            per_class_accuracy,
            confusion,
            predictions,
            probabilities,
        })
    }
}

/// Accuracy, per-class accuracy and confusion matrix in evaluation mode.
pub fn evaluate<T: Scalar, M: Classifier<T>>(
    model: &M,
    data: &[SkeletonSequence],
) -> Result<EvalReport> {
    check_labels(data.iter().map(|s| s.label), model.num_classes())?;
    let probs = predict_proba(model, data)?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    EvalReport::from_probabilities(probs, &labels, model.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_and_per_class() {
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        let r = EvalReport::from_probabilities(probs, &[0, 1, 1], 2).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(r.per_class_accuracy, vec![Some(1.0), Some(0.5)]);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax_rows(&[0.5, 0.5, 0.2, 0.1, 0.7, 0.2], 3), vec![0, 1]);
    }
}
