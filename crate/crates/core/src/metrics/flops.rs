//! Analytic floating-point operation counts.
//!
//! A multiply-add counts as two operations. A training step is counted as
//! three forward passes (forward plus a backward pass of twice the cost).

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;

pub const TRAIN_MULTIPLIER: u128 = 3;
pub const DEFAULT_EXTRAPOLATION: u128 = 10_000_000;

/// Nearest-neighbor cost estimate `E(T + I) + 3·D·T·I` for embedding cost
/// `E`, dimension `D`, `T` indexed and `I` queried samples.
pub fn flops_nn_estimate(d: u128, t: u128, i: u128, e: u128) -> u128 {
    e * (t + i) + 3 * d * t * i
}

/// Transformer blocks without the language head. Layer norms, softmax and
/// activations are lower order and omitted.
pub fn flops_encoder(cfg: &BackboneConfig, seq: usize) -> u128 {
    let (s, d, f) = (seq as u128, cfg.d_model as u128, cfg.d_ff as u128);
    let per_layer = 2 * s * d * (3 * d) // q, k, v projections
        + 2 * s * s * d // attention scores
        + 2 * s * s * d // weighted sum of values
        + 2 * s * d * d // output projection
        + 2 * s * d * f * 2; // two MLP matrices
    cfg.layers as u128 * per_layer
}

/// Full forward pass with the language head applied to every position.
pub fn flops_forward(cfg: &BackboneConfig, seq: usize, vocab: usize) -> u128 {
    flops_encoder(cfg, seq) + 2 * seq as u128 * cfg.d_model as u128 * vocab as u128
}

pub fn flops_head(d_model: usize, labels: usize) -> u128 {
    2 * d_model as u128 * labels as u128
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub method: String,
    /// Total over the whole training run; `None` when not estimable.
    pub training: Option<u128>,
    pub training_samples: u64,
    /// Mean inference cost per sample, rounded down.
    pub inference_per_sample: Option<u128>,
    pub inference_samples: u64,
    pub inference_total: Option<u128>,
    pub extrapolation_count: u128,
    pub inference_extrapolated: Option<u128>,
    pub formula: String,
}

impl FlopsLedger {
    pub fn new(method: impl Into<String>, formula: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            training: Some(0),
            training_samples: 0,
            inference_per_sample: None,
            inference_samples: 0,
            inference_total: Some(0),
            extrapolation_count: DEFAULT_EXTRAPOLATION,
            inference_extrapolated: None,
            formula: formula.into(),
        }
    }

    pub fn add_training(&mut self, flops: Option<u128>) {
        self.training = match (self.training, flops) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self.training_samples += 1;
    }

    pub fn add_inference(&mut self, flops: Option<u128>) {
        self.inference_total = match (self.inference_total, flops) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self.inference_samples += 1;
        self.refresh();
    }

    fn refresh(&mut self) {
        self.inference_per_sample = match (self.inference_total, self.inference_samples) {
            (Some(t), n) if n > 0 => Some(t / u128::from(n)),
            _ => None,
        };
        self.inference_extrapolated = match (self.inference_total, self.inference_samples) {
            (Some(t), n) if n > 0 => Some(t * self.extrapolation_count / u128::from(n)),
            _ => None,
        };
    }

    pub fn set_extrapolation(&mut self, count: u128) {
        self.extrapolation_count = count;
        self.refresh();
    }

    pub fn merge_inference(&mut self, other: &FlopsLedger) {
        self.inference_total = match (self.inference_total, other.inference_total) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self.inference_samples += other.inference_samples;
        self.refresh();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nn_estimate_small_cases() {
        assert_eq!(flops_nn_estimate(1, 1, 1, 0), 3);
        assert_eq!(flops_nn_estimate(7, 0, 11, 5), 55);
    }

    #[test]
    fn attention_is_superlinear() {
        let cfg = BackboneConfig::default();
        assert!(flops_encoder(&cfg, 200) > 2 * flops_encoder(&cfg, 100));
    }

    #[test]
    fn ledger_is_linear() {
        let mut l = FlopsLedger::new("x", "");
        for _ in 0..10 {
            l.add_inference(Some(123));
        }
        assert_eq!(l.inference_total, Some(1230));
        assert_eq!(l.inference_per_sample, Some(123));
        assert_eq!(l.inference_extrapolated, Some(123 * DEFAULT_EXTRAPOLATION));
    }
}
