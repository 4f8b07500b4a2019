//! Two-model ensemble: a deep structural model paired with a shallow
//! sequential one.
//!
//! The shallow member (1 layer, positional encoding) is good at judging
//! whether anything is wrong; the deep member (many layers, no positional
//! encoding) is good at pointing at tokens. The combination rule follows
//! that split: the bug/no-bug decision comes from the shallow model's
//! no-bug slot, and whenever it says "bug" the location and repair come
//! from the deep model, with the location argmax restricted to token
//! slots so the two decisions cannot contradict each other.

use super::{aggregate_metrics, argmax, flags_for, TaskMetrics, VarMisuseModel, VarMisuseSample};
use crate::error::{Error, Result};

/// Combined decision for one sample. `location_slot` equals the sample's
/// no-bug slot when the ensemble predicts a clean program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsemblePrediction {
    pub location_slot: usize,
    pub repair: usize,
}

impl EnsemblePrediction {
    pub fn predicts_bug(&self, sample: &VarMisuseSample) -> bool {
        self.location_slot != sample.no_bug_slot()
    }
}

/// Runs both members on one sample and combines them. The members must
/// share a vocabulary (their pointer decisions refer to the same token
/// ids); architectures may differ freely.
pub fn ensemble_predict(
    deep: &VarMisuseModel,
    shallow: &VarMisuseModel,
    sample: &VarMisuseSample,
) -> Result<EnsemblePrediction> {
    if deep.vocab != shallow.vocab {
        return Err(Error::VocabMismatch(
            "ensemble members were trained on different vocabularies".to_string(),
        ));
    }
    let (shallow_loc, _) = shallow.logits(sample)?;
    let (deep_loc, deep_rep) = deep.logits(sample)?;
    let repair = argmax(&deep_rep);
    if argmax(&shallow_loc) == sample.no_bug_slot() {
        Ok(EnsemblePrediction {
            location_slot: sample.no_bug_slot(),
            repair,
        })
    } else {
        let location_slot = argmax(&deep_loc[..sample.graph.token_count()]);
        Ok(EnsemblePrediction {
            location_slot,
            repair,
        })
    }
}

/// Aggregate rates of the combined predictor over a sample set.
pub fn ensemble_evaluate(
    deep: &VarMisuseModel,
    shallow: &VarMisuseModel,
    samples: &[VarMisuseSample],
) -> Result<TaskMetrics> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot evaluate an empty sample set".to_string(),
        ));
    }
    let mut flags = Vec::with_capacity(samples.len());
    for sample in samples {
        let p = ensemble_predict(deep, shallow, sample)?;
        flags.push(flags_for(sample, p.location_slot, p.repair));
    }
    Ok(aggregate_metrics(&flags))
}
