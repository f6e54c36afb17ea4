//! Mini-batch loop shared by every trained method.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adamw_step, AdamWState, GradAccumulator, Graph, ParamGroup, ParamStore, Var};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean micro-batch loss of each optimizer step.
    pub step_losses: Vec<f64>,
}

impl EpochRecord {
    pub fn mean_loss(&self) -> f64 {
        self.step_losses.iter().sum::<f64>() / self.step_losses.len().max(1) as f64
    }
}

/// Everything needed to continue a run after the last finished epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: AdamWState,
    pub groups: Vec<ParamGroup>,
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(params: ParamStore, groups: Vec<ParamGroup>) -> Self {
        Self {
            params,
            optimizer: AdamWState::default(),
            groups,
            epochs_done: 0,
            history: Vec::new(),
        }
    }
}

pub(crate) struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Visiting order of epoch `epoch`; depends only on the seed so that a
/// resumed run repeats it.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &format!("epoch-{epoch}")));
    order
}

/// Runs the remaining epochs of `state`.
///
/// `sample_loss(g, vars, sample, batch)` builds one micro-batch loss; the
/// optimizer step uses the mean of the accumulated micro-batch gradients.
pub(crate) fn run_epochs<F>(
    state: &mut Checkpoint,
    n_samples: usize,
    cfg: &LoopConfig,
    mut sample_loss: F,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<()>
where
    F: FnMut(&mut Graph, &BTreeMap<String, Var>, usize, &[usize]) -> Result<Var>,
{
    if n_samples == 0 {
        return Err(Error::Data("no training samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if state.params.is_empty() {
        return Err(Error::Config("nothing to train".into()));
    }
    for epoch in state.epochs_done..cfg.epochs {
        let order = epoch_order(n_samples, cfg.seed, epoch);
        let mut record = EpochRecord {
            epoch,
            step_losses: Vec::new(),
        };
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = GradAccumulator::new();
            let mut loss_sum = 0.0;
            for &i in batch {
                let mut g = Graph::new();
                let mut vars = BTreeMap::new();
                for (name, t) in &state.params {
                    vars.insert(name.clone(), g.param(name.clone(), t.clone())?);
                }
                let loss = sample_loss(&mut g, &vars, i, batch).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss: value });
                }
                loss_sum += value;
                acc.add(&g.backward(loss)?)?;
            }
            let grads = acc.finish().expect("non-empty batch");
            adamw_step(&mut state.params, &state.groups, &grads, &mut state.optimizer)?;
            if state.params.values().any(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: loss_sum / batch.len() as f64,
                });
            }
            record.step_losses.push(loss_sum / batch.len() as f64);
        }
        log::info!("epoch {epoch}: mean loss {:.6}", record.mean_loss());
        state.history.push(record);
        state.epochs_done = epoch + 1;
        on_epoch(state)?;
    }
    Ok(())
}
