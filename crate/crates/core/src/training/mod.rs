//! Training loop, optimizer and class-imbalance countermeasures.

mod augment;
mod balance;
mod optim;

use thiserror::Error;

use crate::data::{DataError, Dataset, SequenceSample};
use crate::hierarchy::{HierarchyError, LabelHierarchy, MultiLevelLabels};
use crate::network::{MsConvRnn, NetworkError};
use crate::rng::{self, Stream};
use crate::tape::Tape;
use crate::tensor::TensorError;

pub use augment::{augment_flip, flip, Flip};
pub use balance::{
    class_weights, effective_number_weight, level_class_weights, patch_weights, BalanceMode, ClassStats, Sampler,
};
pub use optim::{adam_step, clip_gradients, global_norm, lr_at, AdamConfig, OptimizerState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Invalid(String),
    #[error("no labeled pixels in the training split")]
    NoLabels,
    #[error("training split is empty")]
    EmptySplit,
    #[error("non-finite gradient in `{param}` at index {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("backward pass: {0}")]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub flip_prob: f64,
    pub balance: BalanceMode,
    pub beta: f64,
    pub oversample: bool,
    pub seed: u64,
    /// Optimizer steps per epoch; by default one pass over the split.
    pub steps_per_epoch: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            base_lr: 1e-3,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            weight_decay: 1e-4,
            grad_clip: 5.0,
            flip_prob: 0.66,
            balance: BalanceMode::None,
            beta: 0.999,
            oversample: false,
            seed: 0,
            steps_per_epoch: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Invalid(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return fail("learning rate must be positive");
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor >= 1.0) {
            return fail("learning-rate decay needs a positive period and a factor >= 1");
        }
        if !(self.grad_clip > 0.0) {
            return fail("gradient clip threshold must be positive");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail("flip probability must lie in [0, 1]");
        }
        if self.weight_decay < 0.0 {
            return fail("weight decay must be non-negative");
        }
        if self.balance == BalanceMode::EffectiveNumber && !(0.0..1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1)");
        }
        if self.steps_per_epoch == Some(0) {
            return fail("steps per epoch must be positive");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Training accuracy per predicted level, coarsest first.
    pub level_accuracy: Vec<f64>,
}

impl EpochLog {
    pub fn header(levels: usize) -> String {
        let mut cols = vec!["epoch".to_string(), "lr".into(), "train_loss".into()];
        cols.extend((1..=levels).map(|l| format!("acc_level{l}")));
        cols.join("\t")
    }

    pub fn tsv_row(&self) -> String {
        let mut cols = vec![self.epoch.to_string(), format!("{:e}", self.lr), format!("{:.6}", self.train_loss)];
        cols.extend(self.level_accuracy.iter().map(|a| format!("{a:.6}")));
        cols.join("\t")
    }
}

/// Where training stopped on a non-finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct Abort {
    pub epoch: usize,
    pub step: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Batch-mean loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub aborted: Option<Abort>,
}

/// Loss, gradients and prediction hits of one sample.
#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub correct: Vec<usize>,
    pub labeled: usize,
}

/// Labels restricted to the levels a model predicts.
pub fn model_labels(model: &MsConvRnn, hierarchy: &LabelHierarchy, sample: &SequenceSample) -> Result<MultiLevelLabels, TrainError> {
    let stages = model.config().stages;
    if stages > hierarchy.levels() {
        return Err(TrainError::Invalid(format!(
            "model predicts {stages} levels, hierarchy has {}",
            hierarchy.levels()
        )));
    }
    let expected = &hierarchy.class_counts()[hierarchy.levels() - stages..];
    if model.config().classes != expected {
        return Err(TrainError::Invalid(format!(
            "model class counts {:?} do not match hierarchy levels {:?}",
            model.config().classes,
            expected
        )));
    }
    Ok(sample.labels(hierarchy)?.finest_levels(stages))
}

/// Forward and backward pass on one sample.
pub fn sample_outcome(
    model: &MsConvRnn,
    sample: &SequenceSample,
    labels: &MultiLevelLabels,
    weights: Option<&[Vec<f64>]>,
) -> Result<SampleOutcome, TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = model.forward(&mut tape, &bound, &sample.input_tensor())?;
    let loss = model.loss(&mut tape, &out, labels, weights)?;
    let volumes = out.prediction_volumes();
    let correct = volumes
        .iter()
        .zip(&labels.levels)
        .map(|(&v, truth)| {
            let pred = tape.value(v).argmax_channels();
            pred.iter().zip(truth).zip(&labels.mask).filter(|((p, t), m)| **m && p == t).count()
        })
        .collect();
    let loss_value = tape.value(loss).item();
    let mut g = tape.backward(loss)?;
    let grads = bound
        .param_vars
        .iter()
        .map(|&v| {
            let len = tape.value(v).len();
            g.take(v).unwrap_or_else(|| vec![0.0; len])
        })
        .collect();
    Ok(SampleOutcome {
        loss: loss_value,
        grads,
        correct,
        labeled: labels.labeled_pixels(),
    })
}

/// Trains `model` on `train_indices` of `dataset`.
///
/// `on_epoch` runs after every completed epoch, e.g. to write a checkpoint.
/// A non-finite loss or gradient stops training before the offending update,
/// leaving the model at its last good state and recording an [`Abort`].
pub fn train(
    model: &mut MsConvRnn,
    dataset: &Dataset,
    train_indices: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &MsConvRnn) -> Result<(), TrainError>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let hierarchy = &dataset.hierarchy;
    let stages = model.config().stages;
    let stats = ClassStats::from_samples(hierarchy, train_indices.iter().map(|&i| &dataset.samples[i]));
    if stats.total() == 0 {
        return Err(TrainError::NoLabels);
    }
    let weights = match config.balance {
        BalanceMode::None => None,
        mode => {
            let all = level_class_weights(mode, &stats, config.beta)?;
            Some(all[all.len() - stages..].to_vec())
        }
    };
    let mut sampler = Sampler::for_split(&dataset.samples, train_indices, &stats.fine, config.oversample)?;
    let mut sample_rng = rng::stream(config.seed, Stream::Sampling);
    let mut aug_rng = rng::stream(config.seed, Stream::Augmentation);
    let mut opt = OptimizerState::new(
        model.named_params().into_iter().map(|(n, t)| (n, t)),
        config.adam,
    );
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| train_indices.len().div_ceil(config.batch_size));

    let mut report = TrainReport {
        log: Vec::new(),
        step_losses: Vec::new(),
        aborted: None,
    };
    'epochs: for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        let mut loss_sum = 0.0;
        let mut correct = vec![0usize; stages];
        let mut labeled = 0usize;
        for step in 0..steps {
            let batch = sampler.sample_batch(config.batch_size, &mut sample_rng);
            let mut grads: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for &i in &batch {
                let mut sample = dataset.samples[i].clone();
                augment_flip(&mut sample, &mut aug_rng, config.flip_prob);
                let labels = model_labels(model, hierarchy, &sample)?;
                let o = sample_outcome(model, &sample, &labels, weights.as_deref())?;
                batch_loss += o.loss;
                for (c, k) in correct.iter_mut().zip(&o.correct) {
                    *c += k;
                }
                labeled += o.labeled;
                match &mut grads {
                    None => grads = Some(o.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&o.grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            let mut grads = grads.expect("non-empty batch");
            for g in grads.iter_mut().flatten() {
                *g /= n;
            }
            if !batch_loss.is_finite() {
                log::error!("epoch {epoch} step {step}: non-finite loss {batch_loss}");
                report.aborted = Some(Abort {
                    epoch,
                    step,
                    reason: format!("non-finite loss {batch_loss}"),
                });
                break 'epochs;
            }
            clip_gradients(&mut grads, config.grad_clip);
            let mut params = model.params_mut();
            match adam_step(&mut opt, &mut params, &grads, lr, config.weight_decay) {
                Ok(()) => {}
                Err(e @ TrainError::NonFiniteGradient { .. }) => {
                    log::error!("epoch {epoch} step {step}: {e}");
                    report.aborted = Some(Abort {
                        epoch,
                        step,
                        reason: e.to_string(),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            report.step_losses.push(batch_loss);
            loss_sum += batch_loss;
            log::debug!("epoch {epoch} step {step} loss {batch_loss:.6}");
        }
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / steps as f64,
            level_accuracy: correct.iter().map(|&c| c as f64 / labeled.max(1) as f64).collect(),
        };
        log::info!("{}", row.tsv_row());
        on_epoch(&row, model)?;
        report.log.push(row);
    }
    Ok(report)
}
