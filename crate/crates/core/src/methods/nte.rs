//! Token-normalized cross-entropy for generated label sequences.
//!
//! Every label is one segment: its tokens plus the SEP or EOS that ends it.
//! A segment contributes the mean negative log-likelihood of its tokens, so a
//! long label name weighs as much as a short one. The batch loss is the mean
//! over all segments in the batch.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSegment {
    /// Logits row predicting the first target token.
    pub start: usize,
    pub targets: Vec<u32>,
    pub weight: f64,
}

/// `Σ_seg weight · mean_j(−log p(target_j))` over the segments of one
/// sequence whose logits are `rows × vocab`.
pub fn segment_nll_sum(g: &mut Graph, logits: Var, segments: &[LabelSegment]) -> Result<Var> {
    if segments.is_empty() {
        return Err(Error::Data("label loss over an empty target span".into()));
    }
    let rows = g.value(logits).rows();
    let mut idx = vec![0usize; rows];
    let mut coef = vec![0.0; rows];
    for seg in segments {
        if seg.targets.is_empty() {
            return Err(Error::Data("label loss over an empty target span".into()));
        }
        if seg.start + seg.targets.len() > rows {
            return Err(Error::shape(
                "nte_loss",
                format!("segment {}..{} beyond {rows} logits rows", seg.start, seg.start + seg.targets.len()),
            ));
        }
        let c = -seg.weight / seg.targets.len() as f64;
        for (j, &t) in seg.targets.iter().enumerate() {
            idx[seg.start + j] = t as usize;
            coef[seg.start + j] += c;
        }
    }
    let logp = g.log_softmax(logits)?;
    let picked = g.pick(logp, &idx)?;
    g.weighted_sum(picked, &coef)
}

/// Mean over all label segments of the batch.
pub fn nte_loss(g: &mut Graph, batch: &[(Var, Vec<LabelSegment>)]) -> Result<Var> {
    let total: usize = batch.iter().map(|(_, s)| s.len()).sum();
    if total == 0 {
        return Err(Error::Data("label loss over an empty target span".into()));
    }
    let mut acc: Option<Var> = None;
    for (logits, segs) in batch {
        let s = segment_nll_sum(g, *logits, segs)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    g.scale(acc.expect("non-empty"), 1.0 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[1, 7]));
        let b = g.constant(Tensor::zeros(&[10, 7]));
        let batch = vec![
            (a, vec![LabelSegment { start: 0, targets: vec![3], weight: 1.0 }]),
            (b, vec![LabelSegment { start: 0, targets: vec![1; 10], weight: 1.0 }]),
        ];
        let l = nte_loss(&mut g, &batch).unwrap();
        assert!((g.value(l).item() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_span_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[1, 7]));
        assert!(segment_nll_sum(&mut g, a, &[]).is_err());
    }
}
