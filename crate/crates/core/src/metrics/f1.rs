use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// Whether the label enters the macro average.
    pub counted: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn confusion(pred: &[Vec<usize>], gold: &[Vec<usize>], n_labels: usize) -> Result<Vec<Confusion>> {
    if pred.len() != gold.len() {
        return Err(Error::shape(
            "macro_f1",
            format!("{} predictions for {} gold rows", pred.len(), gold.len()),
        ));
    }
    let mut c = vec![Confusion::default(); n_labels];
    let mut p = vec![false; n_labels];
    let mut g = vec![false; n_labels];
    for (ps, gs) in pred.iter().zip(gold) {
        p.iter_mut().for_each(|v| *v = false);
        g.iter_mut().for_each(|v| *v = false);
        for &l in ps {
            *p.get_mut(l).ok_or_else(|| Error::Data(format!("label {l} outside taxonomy")))? = true;
        }
        for &l in gs {
            *g.get_mut(l).ok_or_else(|| Error::Data(format!("label {l} outside taxonomy")))? = true;
        }
        for l in 0..n_labels {
            match (p[l], g[l]) {
                (true, true) => c[l].tp += 1,
                (true, false) => c[l].fp += 1,
                (false, true) => c[l].fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(c)
}

/// Per-label precision, recall and F1. Labels absent from both gold and
/// predictions are flagged as not counted.
pub fn per_label_scores(
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    labels: &[String],
) -> Result<Vec<LabelScores>> {
    let c = confusion(pred, gold, labels.len())?;
    Ok(c
        .iter()
        .zip(labels)
        .map(|(c, name)| LabelScores {
            label: name.clone(),
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            support: c.tp + c.fn_,
            predicted: c.tp + c.fp,
            counted: c.tp + c.fp + c.fn_ > 0,
        })
        .collect())
}

/// Unweighted mean of per-label F1 over labels that occur in gold or in the
/// predictions.
pub fn macro_f1(pred: &[Vec<usize>], gold: &[Vec<usize>], n_labels: usize) -> Result<f64> {
    let c = confusion(pred, gold, n_labels)?;
    let counted: Vec<f64> = c
        .iter()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(|c| ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_))
        .collect();
    if counted.is_empty() {
        return Err(Error::Undefined("macro F1 with no positives anywhere".into()));
    }
    Ok(counted.iter().sum::<f64>() / counted.len() as f64)
}

pub fn micro_f1(pred: &[Vec<usize>], gold: &[Vec<usize>], n_labels: usize) -> Result<f64> {
    let c = confusion(pred, gold, n_labels)?;
    let (tp, fp, fn_) = c
        .iter()
        .fold((0, 0, 0), |(a, b, d), c| (a + c.tp, b + c.fp, d + c.fn_));
    Ok(ratio(2 * tp, 2 * tp + fp + fn_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_empty() {
        let gold = vec![vec![0], vec![1], vec![0, 1]];
        assert_eq!(macro_f1(&gold, &gold, 2).unwrap(), 1.0);
        let empty = vec![vec![]; 3];
        assert_eq!(macro_f1(&empty, &gold, 2).unwrap(), 0.0);
    }

    #[test]
    fn absent_label_excluded() {
        let gold = vec![vec![0], vec![0]];
        assert_eq!(macro_f1(&gold, &gold, 5).unwrap(), 1.0);
        // A spurious prediction of an absent label counts as F1 = 0.
        let pred = vec![vec![0, 3], vec![0]];
        assert_eq!(macro_f1(&pred, &gold, 5).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(macro_f1(&[vec![0]], &[], 1).is_err());
    }
}
