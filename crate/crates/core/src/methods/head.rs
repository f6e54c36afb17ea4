//! Sigmoid classification head, trained jointly with a soft prompt (PTEC) or
//! alone on cached frozen embeddings (CH).

use rand_distr::{Distribution, Normal};

use super::t2t::soft_prompt_init;
use super::train::{run_epochs, Checkpoint, LoopConfig};
use super::trained::{prompt_ids, MethodConfig};
use super::{Method, Prediction};
use crate::backbone::LanguageModel;
use crate::data::{class_weights, Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::metrics::flops::{flops_encoder, flops_head, TRAIN_MULTIPLIER};
use crate::numerics::{Graph, ParamGroup, ParamStore, Tensor, Var};
use crate::seed::rng_for;

pub const SOFT_PROMPT: &str = "soft_prompt";
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

const HEAD_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationHead {
    /// `d_model × labels`.
    pub w: Tensor,
    pub b: Tensor,
    pub tau: f64,
}

impl ClassificationHead {
    pub fn init(d_model: usize, labels: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "head-init");
        let normal = Normal::new(0.0, HEAD_INIT_STD).expect("valid std");
        let w = (0..d_model * labels).map(|_| normal.sample(&mut rng)).collect();
        Self {
            w: Tensor::matrix(d_model, labels, w).expect("shape"),
            b: Tensor::zeros(&[labels]),
            tau: 0.5,
        }
    }

    pub fn labels(&self) -> usize {
        self.w.cols()
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {tau}")));
        }
        self.tau = tau;
        Ok(())
    }

    /// `σ(W·e + b)` for one embedding.
    pub fn scores(&self, embedding: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let e = g.constant(embedding.clone());
        let w = g.constant(self.w.clone());
        let b = g.constant(self.b.clone());
        let z = head_logits(&mut g, w, b, e)?;
        let s = g.sigmoid(z)?;
        Ok(g.value(s).data().to_vec())
    }

    /// Labels whose score reaches τ; with `fallback_top1` an otherwise empty
    /// prediction becomes the single best label.
    pub fn decide(&self, scores: &[f64], fallback_top1: bool) -> Vec<usize> {
        let mut out: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= self.tau).collect();
        if out.is_empty() && fallback_top1 {
            let best = (0..scores.len()).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            out.push(best);
        }
        out
    }

    pub(crate) fn into_params(self) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(HEAD_W.into(), self.w);
        p.insert(HEAD_B.into(), self.b);
        p
    }

    pub(crate) fn from_params(params: &ParamStore, tau: f64) -> Result<Self> {
        let get = |k: &str| {
            params
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("missing tensor `{k}`")))
        };
        let (w, b) = (get(HEAD_W)?, get(HEAD_B)?);
        if w.shape().len() != 2 || b.shape() != [w.cols()] {
            return Err(Error::Format("head tensors misshapen".into()));
        }
        Ok(Self { w, b, tau })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PtecModel {
    /// `m × d_model`; absent when m = 0.
    pub soft_prompt: Option<Tensor>,
    pub head: ClassificationHead,
}

impl PtecModel {
    pub fn prompt_len(&self) -> usize {
        self.soft_prompt.as_ref().map_or(0, Tensor::rows)
    }
}

pub fn head_logits(g: &mut Graph, w: Var, b: Var, embedding: Var) -> Result<Var> {
    let z = g.matmul(embedding, w)?;
    g.add(z, b)
}

/// Class-weighted binary cross-entropy over all labels against the multi-hot
/// gold vector. Positive terms carry their label's class weight.
pub fn ptec_sample_loss(
    g: &mut Graph,
    embedding: Var,
    w: Var,
    b: Var,
    gold: &[usize],
    class_weights: &[f64],
) -> Result<Var> {
    let l = class_weights.len();
    let mut targets = vec![0.0; l];
    for &j in gold {
        *targets
            .get_mut(j)
            .ok_or_else(|| Error::Data(format!("label {j} outside taxonomy")))? = 1.0;
    }
    let weights: Vec<f64> = (0..l).map(|j| if targets[j] == 1.0 { class_weights[j] } else { 1.0 }).collect();
    let z = head_logits(g, w, b, embedding)?;
    g.bce_with_logits(z, &targets, &weights)
}

fn head_groups(cfg: &MethodConfig, with_prompt: bool) -> Vec<ParamGroup> {
    let mut groups = Vec::new();
    if with_prompt {
        groups.push(ParamGroup::new("soft-prompt", vec![SOFT_PROMPT.into()], cfg.sp_lr, 0.0));
    }
    groups.push(ParamGroup::new(
        "head",
        vec![HEAD_W.into(), HEAD_B.into()],
        cfg.ch_lr,
        cfg.weight_decay,
    ));
    groups
}

fn loop_config(cfg: &MethodConfig) -> LoopConfig {
    LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    }
}

pub struct HeadTraining<T> {
    pub model: T,
    pub checkpoint: Checkpoint,
    pub flops: u128,
}

/// Trains soft prompt and head concurrently with separate learning rates.
pub fn train_ptec(
    model: &dyn LanguageModel,
    taxonomy: &Taxonomy,
    train: &[&Sample],
    cfg: &MethodConfig,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<HeadTraining<PtecModel>> {
    let weights = class_weights(train, taxonomy.len())?;
    let m = cfg.sp_len;
    let budget = model.config().max_seq.saturating_sub(m);
    let inputs: Vec<Vec<u32>> = train.iter().map(|s| prompt_ids(s, budget)).collect::<Result<_>>()?;

    let mut state = match resume {
        Some(c) => c,
        None => {
            let mut params = ClassificationHead::init(model.config().d_model, taxonomy.len(), cfg.seed).into_params();
            if m > 0 {
                params.insert(SOFT_PROMPT.into(), soft_prompt_init(model, taxonomy, m, cfg.seed)?);
            }
            Checkpoint::new(params, head_groups(cfg, m > 0))
        }
    };
    run_epochs(
        &mut state,
        train.len(),
        &loop_config(cfg),
        |g, vars, i, _| {
            let prefix = vars.get(SOFT_PROMPT).copied();
            let e = model.pooled_embedding(g, prefix, &inputs[i])?;
            ptec_sample_loss(g, e, vars[HEAD_W], vars[HEAD_B], &train[i].labels, &weights)
        },
        on_epoch,
    )?;

    let d = model.config().d_model;
    let per_epoch: u128 = inputs
        .iter()
        .map(|ids| flops_encoder(model.config(), m + ids.len()) + flops_head(d, taxonomy.len()))
        .sum();
    let epochs_run = state.epochs_done as u128;
    let ptec = PtecModel {
        soft_prompt: state.params.get(SOFT_PROMPT).cloned(),
        head: ClassificationHead::from_params(&state.params, 0.5)?,
    };
    Ok(HeadTraining {
        model: ptec,
        checkpoint: state,
        flops: TRAIN_MULTIPLIER * per_epoch * epochs_run,
    })
}

/// Frozen pooled embeddings without a soft prompt.
pub fn embed_samples(model: &dyn LanguageModel, samples: &[&Sample]) -> Result<Vec<Tensor>> {
    let budget = model.config().max_seq;
    samples
        .iter()
        .map(|s| {
            let ids = prompt_ids(s, budget)?;
            let mut g = Graph::new();
            let e = model.pooled_embedding(&mut g, None, &ids)?;
            Ok(g.value(e).clone())
        })
        .collect()
}

/// Head-only training on precomputed embeddings; the backbone is not run.
pub fn train_ch(
    embeddings: &[Tensor],
    gold: &[Vec<usize>],
    n_labels: usize,
    cfg: &MethodConfig,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<HeadTraining<ClassificationHead>> {
    if embeddings.len() != gold.len() {
        return Err(Error::shape("train_ch", "embedding and label counts differ"));
    }
    let d = embeddings.first().map_or(0, Tensor::len);
    let refs: Vec<Sample> = gold
        .iter()
        .map(|labels| Sample {
            id: String::new(),
            name: String::new(),
            keywords: Vec::new(),
            description: String::new(),
            labels: labels.clone(),
        })
        .collect();
    let refs: Vec<&Sample> = refs.iter().collect();
    let weights = class_weights(&refs, n_labels)?;
    let mut state = match resume {
        Some(c) => c,
        None => Checkpoint::new(
            ClassificationHead::init(d, n_labels, cfg.seed).into_params(),
            head_groups(cfg, false),
        ),
    };
    run_epochs(
        &mut state,
        embeddings.len(),
        &loop_config(cfg),
        |g, vars, i, _| {
            let e = g.constant(embeddings[i].clone());
            ptec_sample_loss(g, e, vars[HEAD_W], vars[HEAD_B], &gold[i], &weights)
        },
        on_epoch,
    )?;
    let epochs_run = state.epochs_done as u128;
    let flops = TRAIN_MULTIPLIER * flops_head(d, n_labels) * embeddings.len() as u128 * epochs_run;
    Ok(HeadTraining {
        model: ClassificationHead::from_params(&state.params, 0.5)?,
        checkpoint: state,
        flops,
    })
}

pub fn ptec_scores(model: &dyn LanguageModel, ptec: &PtecModel, ids: &[u32]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let prefix = ptec.soft_prompt.as_ref().map(|t| g.constant(t.clone()));
    let e = model.pooled_embedding(&mut g, prefix, ids)?;
    let e = g.value(e).clone();
    ptec.head.scores(&e)
}

pub fn predict_ptec(
    model: &dyn LanguageModel,
    ptec: &PtecModel,
    ids: &[u32],
    fallback_top1: bool,
) -> Result<Prediction> {
    let scores = ptec_scores(model, ptec, ids)?;
    let flops = flops_encoder(model.config(), ptec.prompt_len() + ids.len())
        + flops_head(model.config().d_model, ptec.head.labels());
    let mut p = Prediction::from_labels(Method::Ptec, ptec.head.decide(&scores, fallback_top1), Some(flops));
    p.scores = Some(scores);
    Ok(p)
}
