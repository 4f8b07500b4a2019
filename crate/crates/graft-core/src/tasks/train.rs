//! Seeded Adam training over the variable-misuse task.
//!
//! Everything that draws randomness (parameter init, epoch shuffles,
//! dropout) derives from `TrainConfig::seed` through fixed streams, so a
//! run is a pure function of (datasets, configs, seed). Gradients are
//! averaged over each minibatch, accumulated in sample-index order.

use super::{dataset_vocab, TaskMetrics, VarMisuseModel, VarMisuseSample};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mix_seed;
use crate::Real;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation joint
    /// accuracy. `None` disables early stopping.
    pub patience: Option<usize>,
    /// Stop as soon as validation joint accuracy reaches this value.
    pub target_joint: Option<Real>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 2,
            seed: 0,
            patience: None,
            target_joint: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is allowed (the loop then measures without
    /// moving), negative or non-finite is not.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch_size must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One epoch's record in the training history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: Real,
    pub val_loss: Real,
    pub val_metrics: TaskMetrics,
}

/// First and second moment estimates, keyed by tensor name.
struct AdamState {
    step: u64,
    first: BTreeMap<String, DenseMatrix>,
    second: BTreeMap<String, DenseMatrix>,
}

impl AdamState {
    fn new() -> AdamState {
        AdamState {
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// One update from batch-summed gradients (`scale` folds in the 1/batch
    /// averaging). Missing gradient names are an internal error.
    fn apply(
        &mut self,
        model: &mut VarMisuseModel,
        grads: &BTreeMap<String, DenseMatrix>,
        scale: Real,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let correction1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let correction2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let first = &mut self.first;
        let second = &mut self.second;
        let mut missing = None;
        model.for_each_tensor_mut(&mut |name, tensor| {
            let Some(grad) = grads.get(&name) else {
                missing.get_or_insert(name);
                return;
            };
            let m = first
                .entry(name.clone())
                .or_insert_with(|| DenseMatrix::zeros(tensor.rows(), tensor.cols()));
            let v = second
                .entry(name)
                .or_insert_with(|| DenseMatrix::zeros(tensor.rows(), tensor.cols()));
            for ((p, &g_raw), (mk, vk)) in tensor
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                let g = g_raw * scale;
                *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * g;
                *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * g * g;
                let m_hat = *mk / correction1;
                let v_hat = *vk / correction2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        });
        match missing {
            Some(name) => Err(Error::DimensionMismatch(format!(
                "no gradient accumulated for tensor {name}"
            ))),
            None => Ok(()),
        }
    }
}

/// Adds every tensor of `grads` into the name-keyed accumulator.
fn accumulate(acc: &mut BTreeMap<String, DenseMatrix>, grads: &super::SampleGrads) -> Result<()> {
    let mut push: Vec<(String, &DenseMatrix)> = Vec::new();
    grads.encoder.for_each_tensor(&mut |name, m| push.push((name, m)));
    grads.heads.for_each_tensor(&mut |name, m| push.push((name, m)));
    for (name, m) in push {
        match acc.get_mut(&name) {
            Some(total) => total.add_assign(m)?,
            None => {
                acc.insert(name, m.clone());
            }
        }
    }
    Ok(())
}

/// Initializes a model from the dataset vocabulary and trains it. Returns
/// the best-by-validation-joint snapshot and the per-epoch history.
pub fn train(
    train_set: &[VarMisuseSample],
    val_set: &[VarMisuseSample],
    cfg: &EncoderConfig,
    tcfg: &TrainConfig,
) -> Result<(VarMisuseModel, Vec<EpochReport>)> {
    let vocab = dataset_vocab(train_set);
    let mut cfg = cfg.clone();
    cfg.vocab_size = vocab.size();
    let model = VarMisuseModel::init(cfg, vocab, tcfg.seed)?;
    train_from(model, train_set, val_set, tcfg)
}

/// Trains an existing model in place (exposed so callers can warm-start).
pub fn train_from(
    mut model: VarMisuseModel,
    train_set: &[VarMisuseSample],
    val_set: &[VarMisuseSample],
    tcfg: &TrainConfig,
) -> Result<(VarMisuseModel, Vec<EpochReport>)> {
    tcfg.validate()?;
    model.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidParameter(
            "training needs a nonempty train set and a nonempty held-out set".to_string(),
        ));
    }
    let mut adam = AdamState::new();
    let mut reports = Vec::new();
    let mut best: Option<(Real, VarMisuseModel)> = None;
    let mut epochs_since_best = 0usize;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        // Stream 1_000_000 + epoch: distinct from every dropout stream,
        // which are derived per (epoch, sample) below.
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 1_000_000 + epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut acc: BTreeMap<String, DenseMatrix> = BTreeMap::new();
            for &idx in batch {
                let dropout_seed =
                    mix_seed(tcfg.seed, ((epoch as u64) << 32) | (idx as u64 + 1));
                let (loss, grads) = model.sample_pass(&train_set[idx], true, dropout_seed)?;
                if !loss.loss.is_finite() {
                    return Err(Error::DivergedLoss {
                        epoch,
                        value: loss.loss,
                    });
                }
                epoch_loss += loss.loss;
                accumulate(&mut acc, &grads)?;
            }
            adam.apply(&mut model, &acc, 1.0 / batch.len() as Real, tcfg)?;
        }
        let train_loss = epoch_loss / train_set.len() as Real;
        let (val_loss, val_metrics) = model.evaluate(val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch,
                value: val_loss,
            });
        }
        reports.push(EpochReport {
            epoch,
            train_loss,
            val_loss,
            val_metrics,
        });

        let improved = best
            .as_ref()
            .map_or(true, |(joint, _)| val_metrics.joint_acc > *joint);
        if improved {
            best = Some((val_metrics.joint_acc, model.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        if tcfg
            .target_joint
            .is_some_and(|t| val_metrics.joint_acc >= t)
        {
            break;
        }
        if tcfg.patience.is_some_and(|p| epochs_since_best >= p) {
            break;
        }
    }
    let trained = best.map(|(_, m)| m).unwrap_or(model);
    Ok((trained, reports))
}
