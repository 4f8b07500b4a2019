//! Variable-misuse task: synthetic programs with a planted wrong-variable
//! bug, pointer heads that localize and repair it, training, and a
//! two-model ensemble.
//!
//! Conventions used throughout:
//!
//! * A clean sample's location target is the extra no-bug slot, index
//!   `token_count`, appended after the per-token location logits.
//! * `bug_location` and `repair_target` are token indices (graph rows).
//!   Both are `None` exactly when the sample is clean.
//! * Accuracy splits: `bugfree_acc` is measured on clean samples only,
//!   the other three rates on buggy samples only. An empty subset counts
//!   as 1.0 so a rate never divides by zero.

mod ensemble;
mod generate;
mod heads;
mod model;
mod train;

pub use ensemble::{ensemble_evaluate, ensemble_predict, EnsemblePrediction};
pub use generate::{dataset_vocab, generate_dataset, read_dataset, write_dataset, DatasetSpec};
pub use heads::{
    pointer_heads_backward, pointer_heads_forward, sample_loss, HeadsCache, PointerHeads,
    SampleLoss,
};
pub use model::{SampleGrads, VarMisuseModel};
pub use train::{train, train_from, EpochReport, TrainConfig};

use crate::graph::CodeGraph;
use crate::Real;
use serde::{Deserialize, Serialize};

/// One task instance. The program parses by construction; buggy samples
/// carry exactly one wrong-variable use.
#[derive(Clone, Debug)]
pub struct VarMisuseSample {
    /// Token texts joined with single spaces; re-lexing reproduces the
    /// graph's token sequence.
    pub source: String,
    pub graph: CodeGraph,
    pub bug_present: bool,
    /// Token index of the misused identifier.
    pub bug_location: Option<usize>,
    /// Token index of an identifier carrying the text that should have
    /// been used (the corrupted statement's assignment target).
    pub repair_target: Option<usize>,
}

impl VarMisuseSample {
    /// Index of the no-bug slot in this sample's location logits.
    pub fn no_bug_slot(&self) -> usize {
        self.graph.token_count()
    }
}

/// Accuracy rates in `[0, 1]`; see the module doc for the subsets each
/// rate is measured on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub joint_acc: Real,
    pub bugfree_acc: Real,
    pub localization_acc: Real,
    pub repair_acc: Real,
}

/// Per-sample correctness flags, the unit [`aggregate_metrics`] counts.
#[derive(Clone, Copy, Debug)]
pub struct SampleFlags {
    pub bug_present: bool,
    pub predicted_no_bug: bool,
    pub localization_correct: bool,
    /// Meaningful only when `bug_present`; ignored otherwise.
    pub repair_correct: bool,
}

/// Derives the flags for one sample from the two argmax decisions.
/// `location_slot` ranges over `0..=token_count` (the last slot meaning
/// no bug), `repair` over `0..token_count`.
pub fn flags_for(sample: &VarMisuseSample, location_slot: usize, repair: usize) -> SampleFlags {
    let predicted_no_bug = location_slot == sample.no_bug_slot();
    let localization_correct = match sample.bug_location {
        Some(loc) => location_slot == loc,
        None => predicted_no_bug,
    };
    let repair_correct = sample.repair_target == Some(repair);
    SampleFlags {
        bug_present: sample.bug_present,
        predicted_no_bug,
        localization_correct,
        repair_correct,
    }
}

/// Folds per-sample flags into the four rates. Localization, repair and
/// joint are counted over buggy samples; bug-free over clean ones.
pub fn aggregate_metrics(flags: &[SampleFlags]) -> TaskMetrics {
    let mut clean = 0usize;
    let mut clean_hit = 0usize;
    let mut buggy = 0usize;
    let mut loc_hit = 0usize;
    let mut rep_hit = 0usize;
    let mut joint_hit = 0usize;
    for f in flags {
        if f.bug_present {
            buggy += 1;
            loc_hit += f.localization_correct as usize;
            rep_hit += f.repair_correct as usize;
            joint_hit += (f.localization_correct && f.repair_correct) as usize;
        } else {
            clean += 1;
            clean_hit += f.predicted_no_bug as usize;
        }
    }
    let rate = |hits: usize, total: usize| {
        if total == 0 {
            1.0
        } else {
            hits as Real / total as Real
        }
    };
    TaskMetrics {
        joint_acc: rate(joint_hit, buggy),
        bugfree_acc: rate(clean_hit, clean),
        localization_acc: rate(loc_hit, buggy),
        repair_acc: rate(rep_hit, buggy),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
