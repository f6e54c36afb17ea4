//! Evaluation metrics, threshold selection, agreement and significance
//! statistics, and FLOPs accounting.

mod f1;
pub mod flops;
mod roc;
mod stats;
mod threshold;

use serde::{Deserialize, Serialize};

pub use f1::{macro_f1, micro_f1, per_label_scores, LabelScores};
pub use flops::{flops_encoder, flops_forward, flops_head, flops_nn_estimate, FlopsLedger};
pub use roc::{roc_and_auroc, roc_csv, roc_point, Roc, RocPoint};
pub use stats::{cohens_kappa, mann_whitney_u, MannWhitney};
pub use threshold::{apply_threshold, select_threshold, threshold_candidates, ThresholdChoice};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub subset: String,
    pub seed: u64,
    pub samples: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_label: Vec<LabelScores>,
    /// Share of generated label strings that name a taxonomy label.
    pub validity_rate: Option<f64>,
    /// Share of generated label strings repeating an earlier one.
    pub duplicate_rate: Option<f64>,
    /// `None` for score-free methods or when undefined.
    pub auroc: Option<f64>,
    /// Cohen's kappa between predicted and gold (sample, label) decisions.
    pub kappa: Option<f64>,
    pub tau: Option<f64>,
}

/// Label-set metrics shared by every method; optional fields start empty.
pub fn label_set_report(
    method: &str,
    subset: &str,
    seed: u64,
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    labels: &[String],
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        method: method.to_owned(),
        subset: subset.to_owned(),
        seed,
        samples: gold.len(),
        macro_f1: macro_f1(pred, gold, labels.len())?,
        micro_f1: micro_f1(pred, gold, labels.len())?,
        per_label: per_label_scores(pred, gold, labels)?,
        validity_rate: None,
        duplicate_rate: None,
        auroc: None,
        kappa: cohens_kappa(&roc::multi_hot(pred, labels.len()), &roc::multi_hot(gold, labels.len())).ok(),
        tau: None,
    })
}
