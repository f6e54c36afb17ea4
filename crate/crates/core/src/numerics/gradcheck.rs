use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::optim::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Fragments with more trainable scalars than this are sampled.
    pub max_scalars: usize,
    pub seed: u64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero by construction do not divide rounding noise by zero.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_scalars: 256,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences for the tensors in `trainable`. Tensors in `frozen` are bound as
/// constants and never perturbed.
pub fn grad_check<F>(
    trainable: &ParamStore,
    frozen: &ParamStore,
    build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&cfg.eps) {
        return Err(Error::Config(format!(
            "grad_check eps must lie in [1e-6, 1e-3], got {}",
            cfg.eps
        )));
    }

    let eval = |store: &ParamStore, want_grad: bool| -> Result<(f64, Option<crate::Gradients>)> {
        let mut g = Graph::new();
        let mut vars = BTreeMap::new();
        for (name, t) in store {
            vars.insert(name.clone(), g.param(name.clone(), t.clone())?);
        }
        for (name, t) in frozen {
            vars.insert(name.clone(), g.constant(t.clone()));
        }
        let loss = build(&mut g, &vars)?;
        let value = g.value(loss).item();
        let grads = if want_grad {
            Some(g.backward(loss)?)
        } else {
            None
        };
        Ok((value, grads))
    };

    let (_, grads) = eval(trainable, true)?;
    let grads = grads.expect("requested");

    let mut coords: Vec<(String, usize)> = trainable
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    if coords.len() > cfg.max_scalars {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = index::sample(&mut rng, coords.len(), cfg.max_scalars).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i].clone()).collect();
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let mut store = trainable.clone();
    for (name, i) in coords {
        let orig = trainable[&name].data()[i];
        store.get_mut(&name).unwrap().data_mut()[i] = orig + cfg.eps;
        let (plus, _) = eval(&store, false)?;
        store.get_mut(&name).unwrap().data_mut()[i] = orig - cfg.eps;
        let (minus, _) = eval(&store, false)?;
        store.get_mut(&name).unwrap().data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = grads[&name].data()[i];
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_param = name.clone();
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn linear_map_is_exact() {
        let mut trainable = ParamStore::new();
        trainable.insert(
            "w".into(),
            Tensor::matrix(3, 2, vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1]).unwrap(),
        );
        let mut frozen = ParamStore::new();
        frozen.insert("x".into(), Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let report = grad_check(
            &trainable,
            &frozen,
            |g, v| {
                let y = g.matmul(v["x"], v["w"])?;
                g.weighted_sum(y, &[1.0, -3.0])
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.worst_param, "w");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let cfg = GradCheckConfig {
            eps: 1e-2,
            ..Default::default()
        };
        let r = grad_check(&ParamStore::new(), &ParamStore::new(), |g, _| Ok(g.constant(Tensor::scalar(0.0))), &cfg);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
