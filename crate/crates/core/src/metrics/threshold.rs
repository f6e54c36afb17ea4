use serde::{Deserialize, Serialize};

use super::f1::macro_f1;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub tau: f64,
    pub macro_f1: f64,
}

/// Label sets `{j : scores[i][j] >= tau}`.
pub fn apply_threshold(scores: &[Vec<f64>], tau: f64) -> Vec<Vec<usize>> {
    scores
        .iter()
        .map(|row| (0..row.len()).filter(|&j| row[j] >= tau).collect())
        .collect()
}

/// Candidate cut points: midpoints between consecutive distinct scores plus
/// one point just below the smallest and one just above the largest.
pub fn threshold_candidates(scores: &[Vec<f64>]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.iter().flatten().copied().collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.is_empty() {
        return Vec::new();
    }
    let min_gap = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let delta = 1e-6f64.min(min_gap / 2.0);
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(s[0] - delta);
    out.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(s[s.len() - 1] + delta);
    out
}

/// Global threshold maximizing validation macro F1; ties go to the larger
/// threshold.
pub fn select_threshold(val_scores: &[Vec<f64>], val_gold: &[Vec<usize>]) -> Result<ThresholdChoice> {
    if val_gold.iter().all(Vec::is_empty) {
        return Err(Error::Data("threshold selection needs a positive validation label".into()));
    }
    let n_labels = val_scores.first().map_or(0, Vec::len);
    let mut best: Option<ThresholdChoice> = None;
    for tau in threshold_candidates(val_scores) {
        let pred = apply_threshold(val_scores, tau);
        let f = macro_f1(&pred, val_gold, n_labels)?;
        // Candidates ascend, so `>=` keeps the largest tied threshold.
        if best.is_none_or(|b| f >= b.macro_f1) {
            best = Some(ThresholdChoice { tau, macro_f1: f });
        }
    }
    best.ok_or_else(|| Error::Data("no validation scores".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_pick_midpoint() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let gold = vec![vec![0], vec![1]];
        let c = select_threshold(&scores, &gold).unwrap();
        assert_eq!(c.macro_f1, 1.0);
        assert!((c.tau - 0.5).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn equal_scores_predict_all_when_better() {
        let scores = vec![vec![0.5, 0.5]; 2];
        let gold = vec![vec![0], vec![1]];
        let c = select_threshold(&scores, &gold).unwrap();
        assert!(c.tau < 0.5);
        assert!((c.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
