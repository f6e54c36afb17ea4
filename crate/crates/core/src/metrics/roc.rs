use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` count as positive. Infinite for the origin point
    /// and NaN for score-free methods.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

pub(crate) fn multi_hot(gold: &[Vec<usize>], n_labels: usize) -> Vec<Vec<bool>> {
    gold.iter()
        .map(|g| {
            let mut row = vec![false; n_labels];
            for &l in g {
                row[l] = true;
            }
            row
        })
        .collect()
}

fn pairs(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Result<(Vec<(f64, bool)>, u64, u64)> {
    if scores.len() != gold.len() {
        return Err(Error::shape("roc", format!("{} score rows for {} gold rows", scores.len(), gold.len())));
    }
    let n_labels = scores.first().map_or(0, Vec::len);
    let hot = multi_hot(gold, n_labels);
    let mut out = Vec::with_capacity(scores.len() * n_labels);
    for (row, g) in scores.iter().zip(&hot) {
        if row.len() != n_labels {
            return Err(Error::shape("roc", "ragged score matrix"));
        }
        for (&s, &y) in row.iter().zip(g) {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Data(format!("score {s} outside [0, 1]")));
            }
            out.push((s, y));
        }
    }
    let pos = out.iter().filter(|p| p.1).count() as u64;
    let neg = out.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("ROC needs both positive and negative pairs".into()));
    }
    Ok((out, pos, neg))
}

/// Micro-averaged ROC over all (sample, label) pairs with trapezoidal AUROC.
///
/// The area is accumulated in integer counts and divided once, so it depends
/// only on the ordering of the scores.
pub fn roc_and_auroc(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Result<Roc> {
    let (mut p, pos, neg) = pairs(scores, gold)?;
    p.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < p.len() {
        let t = p[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < p.len() && p[i].0 == t {
            if p[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auroc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(Roc { points, auroc })
}

/// Single operating point for methods that emit label sets without scores.
pub fn roc_point(pred: &[Vec<usize>], gold: &[Vec<usize>], n_labels: usize) -> Result<RocPoint> {
    if pred.len() != gold.len() {
        return Err(Error::shape("roc_point", "prediction and gold lengths differ"));
    }
    let ph = multi_hot(pred, n_labels);
    let gh = multi_hot(gold, n_labels);
    let (mut tp, mut fp, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (pr, gr) in ph.iter().zip(&gh) {
        for (&p, &g) in pr.iter().zip(gr) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                _ => {}
            }
            if g {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("ROC needs both positive and negative pairs".into()));
    }
    Ok(RocPoint {
        threshold: f64::NAN,
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
    })
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        let t = if p.threshold.is_nan() {
            String::new()
        } else if p.threshold.is_infinite() {
            "inf".into()
        } else {
            format!("{}", p.threshold)
        };
        out.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
    }
    out
}
