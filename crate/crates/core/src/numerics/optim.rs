use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors.
pub type ParamStore = BTreeMap<String, Tensor>;

/// A set of parameters sharing one learning rate and weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<String>,
    pub lr: f64,
    pub weight_decay: f64,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, params: Vec<String>, lr: f64, weight_decay: f64) -> Self {
        Self {
            name: name.into(),
            params,
            lr,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamWState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamWState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

fn validate_groups(params: &ParamStore, groups: &[ParamGroup]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for group in groups {
        if !(group.lr > 0.0) || !group.lr.is_finite() {
            return Err(Error::Config(format!(
                "group `{}` learning rate must be positive, got {}",
                group.name, group.lr
            )));
        }
        if group.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "group `{}` weight decay must be non-negative",
                group.name
            )));
        }
        for p in &group.params {
            if !params.contains_key(p) {
                return Err(Error::Config(format!(
                    "group `{}` names unknown parameter `{p}`",
                    group.name
                )));
            }
            if !seen.insert(p.as_str()) {
                return Err(Error::DuplicateParam(p.clone()));
            }
        }
    }
    if let Some(missing) = params.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(Error::UngroupedParam(missing.clone()));
    }
    Ok(())
}

/// One AdamW update with decoupled weight decay scaled by each group's
/// learning rate and bias-corrected moments.
pub fn adamw_step(
    params: &mut ParamStore,
    groups: &[ParamGroup],
    grads: &Gradients,
    state: &mut AdamWState,
) -> Result<()> {
    validate_groups(params, groups)?;
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adamw_step",
                format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape()),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for group in groups {
        for name in &group.params {
            let p = params.get_mut(name).expect("validated");
            let g = grads[name].data();
            let m = state
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = state
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let decay = 1.0 - group.lr * group.weight_decay;
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *pi *= decay;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= group.lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Sums micro-batch gradients; [`finish`](Self::finish) divides by the
/// number of micro-batches.
#[derive(Debug, Default)]
pub struct GradAccumulator {
    sums: Gradients,
    count: usize,
}

impl GradAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            match self.sums.get_mut(name) {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(Error::shape("accumulate", name.clone()));
                    }
                    acc.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b);
                }
                None => {
                    self.sums.insert(name.clone(), g.clone());
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&mut self) -> Option<Gradients> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let mut out = std::mem::take(&mut self.sums);
        for g in out.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        self.count = 0;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w".into(), Tensor::vector(vec![value]));
        p
    }

    fn grad(value: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::vector(vec![value]));
        g
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(1.5);
        let groups = [ParamGroup::new("all", vec!["w".into()], 0.1, 0.0)];
        let mut st = AdamWState::default();
        adamw_step(&mut p, &groups, &grad(0.0), &mut st).unwrap();
        assert_eq!(p["w"].data(), &[1.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g² after bias correction so the step is lr·g/(|g|+ε).
        let mut p = single(0.0);
        let groups = [ParamGroup::new("all", vec!["w".into()], 0.1, 0.0)];
        let mut st = AdamWState::new(0.9, 0.999, 1e-8);
        adamw_step(&mut p, &groups, &grad(1.0), &mut st).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p["w"].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_scales_with_group_lr() {
        let mut p = single(2.0);
        let groups = [ParamGroup::new("all", vec!["w".into()], 0.1, 0.5)];
        let mut st = AdamWState::default();
        adamw_step(&mut p, &groups, &grad(0.0), &mut st).unwrap();
        assert!((p["w"].item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn ungrouped_and_doubly_grouped_params_rejected() {
        let mut p = single(0.0);
        let mut st = AdamWState::default();
        assert!(matches!(
            adamw_step(&mut p, &[], &grad(1.0), &mut st),
            Err(Error::UngroupedParam(_))
        ));
        let twice = [
            ParamGroup::new("a", vec!["w".into()], 0.1, 0.0),
            ParamGroup::new("b", vec!["w".into()], 0.1, 0.0),
        ];
        assert!(adamw_step(&mut p, &twice, &grad(1.0), &mut st).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(0.0);
        let groups = [ParamGroup::new("all", vec!["w".into()], 0.1, 0.0)];
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::vector(vec![1.0, 2.0]));
        let mut st = AdamWState::default();
        assert!(matches!(
            adamw_step(&mut p, &groups, &g, &mut st),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn accumulator_averages() {
        let mut acc = GradAccumulator::new();
        acc.add(&grad(1.0)).unwrap();
        acc.add(&grad(3.0)).unwrap();
        let g = acc.finish().unwrap();
        assert_eq!(g["w"].item(), 2.0);
        assert!(acc.finish().is_none());
    }
}
