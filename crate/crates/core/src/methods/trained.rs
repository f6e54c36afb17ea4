//! One entry point for fitting, applying and persisting every method.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::artifact::{Artifact, ArtifactMeta, ARTIFACT_VERSION};
use super::head::{embed_samples, predict_ptec, train_ch, train_ptec, ClassificationHead, PtecModel, SOFT_PROMPT};
use super::neighbors::{neighbor_decide, GzipIndex, NeighborIndex, GZIP_LEVEL};
use super::nshot::nshot_predict;
use super::t2t::{decode_t2t, predict_pt_ts, prediction_from_decode, train_pt_t2t};
use super::train::Checkpoint;
use super::{Method, Prediction};
use crate::backbone::tokenizer::tokenize;
use crate::backbone::LanguageModel;
use crate::data::{assemble_prompt, Sample, SampleRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::metrics::flops::{flops_encoder, flops_head};
use crate::numerics::{Graph, Tensor};
use crate::trie::LabelTrie;

const INDEX_EMBEDDINGS: &str = "index.embeddings";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceWeight {
    /// Class weight of the rarest gold label.
    #[default]
    Max,
    Mean,
}

/// Hyperparameters of all methods; each method reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Effective batch size reached by gradient accumulation.
    pub batch_size: usize,
    /// Soft-prompt length m.
    pub sp_len: usize,
    pub sp_lr: f64,
    pub ch_lr: f64,
    pub weight_decay: f64,
    pub instance_weight: InstanceWeight,
    pub k: usize,
    pub radius: f64,
    pub n_shot: usize,
    pub max_labels: usize,
    pub max_new_tokens: usize,
    pub fallback_top1: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 32,
            sp_len: 16,
            sp_lr: 1e-1,
            ch_lr: 1e-1,
            weight_decay: 0.0,
            instance_weight: InstanceWeight::Max,
            k: 1,
            radius: 1.0,
            n_shot: 7,
            max_labels: 4,
            max_new_tokens: 64,
            fallback_top1: false,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if self.max_labels == 0 {
            return bad("max_labels must be at least 1");
        }
        for (name, v) in [("sp_lr", self.sp_lr), ("ch_lr", self.ch_lr), ("weight_decay", self.weight_decay)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Token ids of a sample's prompt within `budget` tokens. Over-long prompts
/// keep their first `budget − 1` tokens and a closing newline.
pub fn prompt_ids(sample: &Sample, budget: usize) -> Result<Vec<u32>> {
    if budget == 0 {
        return Err(Error::Config("no room for the prompt".into()));
    }
    let mut ids = tokenize(assemble_prompt(sample).as_bytes());
    if ids.len() > budget {
        log::warn!("prompt of sample {} truncated from {} to {budget} tokens", sample.id, ids.len());
        ids.truncate(budget - 1);
        ids.push(u32::from(b'\n'));
    }
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Ptec(PtecModel),
    Ch(ClassificationHead),
    Prompt(Tensor),
    Knn { index: NeighborIndex, tau: f64 },
    Radius { index: NeighborIndex, tau: f64 },
    Gzip { index: GzipIndex, tau: f64 },
    NShot { examples: Vec<Sample> },
}

/// Result of [`Trained::fit`].
pub struct Fitted {
    pub trained: Trained,
    /// Final optimizer state for gradient-trained methods.
    pub checkpoint: Option<Checkpoint>,
    /// Analytic training cost; `None` when not estimable.
    pub flops: Option<u128>,
}

/// A fitted method bound to its taxonomy.
#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    method: Method,
    config: MethodConfig,
    taxonomy: Taxonomy,
    trie: Option<LabelTrie>,
    body: Body,
}

fn embedding_cost(model: &dyn LanguageModel, samples: &[&Sample]) -> Result<u128> {
    let max_seq = model.config().max_seq;
    samples
        .iter()
        .map(|s| Ok(flops_encoder(model.config(), prompt_ids(s, max_seq)?.len())))
        .sum()
}

fn rows(t: &[Tensor]) -> Vec<Vec<f64>> {
    t.iter().map(|e| e.data().to_vec()).collect()
}

impl Trained {
    pub fn fit(
        method: Method,
        model: &dyn LanguageModel,
        taxonomy: &Taxonomy,
        train: &[&Sample],
        cfg: &MethodConfig,
        resume: Option<Checkpoint>,
        on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<Fitted> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        let gold: Vec<Vec<usize>> = train.iter().map(|s| s.labels.clone()).collect();
        let l = taxonomy.len();
        let (body, checkpoint, flops) = match method {
            Method::Ptec => {
                let r = train_ptec(model, taxonomy, train, cfg, resume, on_epoch)?;
                (Body::Ptec(r.model), Some(r.checkpoint), Some(r.flops))
            }
            Method::Ch => {
                let emb = embed_samples(model, train)?;
                let r = train_ch(&emb, &gold, l, cfg, resume, on_epoch)?;
                let cost = embedding_cost(model, train)? + r.flops;
                (Body::Ch(r.model), Some(r.checkpoint), Some(cost))
            }
            Method::PtT2t | Method::PtTs => {
                let r = train_pt_t2t(model, taxonomy, train, cfg, resume, on_epoch)?;
                (Body::Prompt(r.soft_prompt), Some(r.checkpoint), Some(r.flops))
            }
            Method::Knn | Method::RadiusNn => {
                let index = NeighborIndex::new(rows(&embed_samples(model, train)?), gold, l)?;
                if method == Method::Knn {
                    index.clamp_k(cfg.k);
                }
                let body = if method == Method::Knn {
                    Body::Knn { index, tau: 0.5 }
                } else {
                    Body::Radius { index, tau: 0.5 }
                };
                (body, None, Some(embedding_cost(model, train)?))
            }
            Method::Gzip => {
                let texts = train.iter().map(|s| assemble_prompt(s).into_bytes()).collect();
                let index = GzipIndex::new(texts, gold, l)?;
                index.clamp_k(cfg.k);
                (Body::Gzip { index, tau: 0.5 }, None, None)
            }
            Method::NShot | Method::NShotTs => (
                Body::NShot {
                    examples: train.iter().map(|s| (*s).clone()).collect(),
                },
                None,
                Some(0),
            ),
        };
        Ok(Fitted {
            trained: Self::assemble(method, cfg.clone(), taxonomy.clone(), body)?,
            checkpoint,
            flops,
        })
    }

    fn assemble(method: Method, config: MethodConfig, taxonomy: Taxonomy, body: Body) -> Result<Self> {
        let trie = match method {
            Method::PtTs | Method::NShotTs => Some(LabelTrie::build(&taxonomy)?),
            _ => None,
        };
        Ok(Self {
            method,
            config,
            taxonomy,
            trie,
            body,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn ptec(&self) -> Option<&PtecModel> {
        match &self.body {
            Body::Ptec(p) => Some(p),
            _ => None,
        }
    }

    pub fn head(&self) -> Option<&ClassificationHead> {
        match &self.body {
            Body::Ptec(p) => Some(&p.head),
            Body::Ch(h) => Some(h),
            _ => None,
        }
    }

    pub fn soft_prompt(&self) -> Option<&Tensor> {
        match &self.body {
            Body::Ptec(p) => p.soft_prompt.as_ref(),
            Body::Prompt(t) => Some(t),
            _ => None,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match &self.body {
            Body::Ptec(p) => Some(p.head.tau),
            Body::Ch(h) => Some(h.tau),
            Body::Knn { tau, .. } | Body::Radius { tau, .. } | Body::Gzip { tau, .. } => Some(*tau),
            _ => None,
        }
    }

    /// Sets the decision threshold. Sigmoid heads need τ strictly inside
    /// (0, 1); callers clamp a selected cut point first.
    pub fn set_tau(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        match &mut self.body {
            Body::Ptec(p) => p.head.set_tau(value),
            Body::Ch(h) => h.set_tau(value),
            Body::Knn { tau, .. } | Body::Radius { tau, .. } | Body::Gzip { tau, .. } => {
                *tau = value;
                Ok(())
            }
            _ => Err(Error::Config(format!("{} has no threshold", self.method))),
        }
    }

    /// Clamps a selected cut point into the range the method accepts.
    pub fn clamp_tau(&self, tau: f64) -> f64 {
        match self.body {
            Body::Ptec(_) | Body::Ch(_) => tau.clamp(1e-12, 1.0 - 1e-12),
            _ => tau,
        }
    }

    fn embed_query(&self, model: &dyn LanguageModel, sample: &Sample) -> Result<(Tensor, u128)> {
        let ids = prompt_ids(sample, model.config().max_seq)?;
        let mut g = Graph::new();
        let e = model.pooled_embedding(&mut g, None, &ids)?;
        Ok((g.value(e).clone(), flops_encoder(model.config(), ids.len())))
    }

    fn decode_budget(&self, model: &dyn LanguageModel, reserve: usize) -> Result<usize> {
        let m = self.soft_prompt().map_or(0, Tensor::rows);
        model
            .config()
            .max_seq
            .checked_sub(m + reserve + 1)
            .filter(|&b| b >= 2)
            .ok_or_else(|| Error::Config("max_seq leaves no room for the prompt".into()))
    }

    pub fn predict(&self, model: &dyn LanguageModel, sample: &Sample) -> Result<Prediction> {
        let cfg = &self.config;
        let l = self.taxonomy.len();
        let scored = |scores: Vec<f64>, labels: Vec<usize>, flops: Option<u128>| {
            let mut p = Prediction::from_labels(self.method, labels, flops);
            p.scores = Some(scores);
            p
        };
        match &self.body {
            Body::Ptec(p) => {
                let ids = prompt_ids(sample, model.config().max_seq.saturating_sub(p.prompt_len()))?;
                predict_ptec(model, p, &ids, cfg.fallback_top1)
            }
            Body::Ch(h) => {
                let (e, cost) = self.embed_query(model, sample)?;
                let s = h.scores(&e)?;
                let labels = h.decide(&s, cfg.fallback_top1);
                Ok(scored(s, labels, Some(cost + flops_head(model.config().d_model, l))))
            }
            Body::Knn { index, tau } | Body::Radius { index, tau } => {
                let (e, cost) = self.embed_query(model, sample)?;
                let s = match self.body {
                    Body::Knn { .. } => index.knn_scores(e.data(), cfg.k)?,
                    _ => index.radius_scores(e.data(), cfg.radius)?,
                };
                let search = 3 * index.dim() as u128 * index.len() as u128;
                let labels = neighbor_decide(&s, *tau);
                Ok(scored(s, labels, Some(cost + search)))
            }
            Body::Gzip { index, tau } => {
                let s = index.scores(assemble_prompt(sample).as_bytes(), cfg.k)?;
                let labels = neighbor_decide(&s, *tau);
                Ok(scored(s, labels, None))
            }
            Body::Prompt(sp) => match &self.trie {
                Some(trie) => {
                    let budget = self.decode_budget(model, trie.max_tokens(cfg.max_labels))?;
                    let ids = prompt_ids(sample, budget)?;
                    predict_pt_ts(model, Some(sp), &ids, trie, &self.taxonomy, cfg.max_labels, self.method)
                }
                None => {
                    let budget = self.decode_budget(model, cfg.max_new_tokens)?;
                    let ids = prompt_ids(sample, budget)?;
                    let d = decode_t2t(model, Some(sp), &ids, &self.taxonomy, cfg.max_new_tokens)?;
                    Ok(prediction_from_decode(self.method, d))
                }
            },
            Body::NShot { examples } => {
                let refs: Vec<&Sample> = examples.iter().collect();
                nshot_predict(model, &self.taxonomy, &refs, sample, self.trie.as_ref(), cfg)
            }
        }
    }

    /// Predictions for many samples, spread over the available cores.
    pub fn predict_many(&self, model: &dyn LanguageModel, samples: &[&Sample]) -> Result<Vec<Prediction>> {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
        let chunk = samples.len().div_ceil(threads).max(1);
        let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| self.predict(model, s)).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("prediction thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn to_artifact(&self, model: &dyn LanguageModel) -> Artifact {
        let mut tensors = BTreeMap::new();
        let mut meta = ArtifactMeta {
            version: ARTIFACT_VERSION,
            method: self.method,
            config: self.config.clone(),
            taxonomy_checksum: self.taxonomy.checksum(),
            backbone_checksum: model.checksum(),
            tau: self.tau(),
            index_labels: None,
            index_texts: None,
            gzip_level: None,
            examples: None,
        };
        match &self.body {
            Body::Ptec(p) => {
                tensors.extend(p.head.clone().into_params());
                if let Some(sp) = &p.soft_prompt {
                    tensors.insert(SOFT_PROMPT.into(), sp.clone());
                }
            }
            Body::Ch(h) => tensors.extend(h.clone().into_params()),
            Body::Prompt(sp) => {
                tensors.insert(SOFT_PROMPT.into(), sp.clone());
            }
            Body::Knn { index, .. } | Body::Radius { index, .. } => {
                let flat: Vec<f64> = index.embeddings().iter().flatten().copied().collect();
                let t = Tensor::matrix(index.len(), index.dim(), flat).expect("rectangular index");
                tensors.insert(INDEX_EMBEDDINGS.into(), t);
                meta.index_labels = Some(index.labels().to_vec());
            }
            Body::Gzip { index, .. } => {
                meta.index_texts = Some(
                    index
                        .texts()
                        .iter()
                        .map(|t| String::from_utf8_lossy(t).into_owned())
                        .collect(),
                );
                meta.index_labels = Some(index.labels().to_vec());
                meta.gzip_level = Some(GZIP_LEVEL);
            }
            Body::NShot { examples } => {
                meta.examples = Some(
                    examples
                        .iter()
                        .map(|s| SampleRecord::from_sample(s, &self.taxonomy))
                        .collect(),
                );
            }
        }
        Artifact { meta, tensors }
    }

    pub fn from_artifact(artifact: &Artifact, taxonomy: &Taxonomy, model: &dyn LanguageModel) -> Result<Self> {
        artifact.verify(taxonomy, model)?;
        let meta = &artifact.meta;
        let tau = meta.tau.unwrap_or(0.5);
        let l = taxonomy.len();
        let labels = || {
            meta.index_labels
                .clone()
                .ok_or_else(|| Error::Format("artifact lacks index labels".into()))
        };
        let body = match meta.method {
            Method::Ptec => Body::Ptec(PtecModel {
                soft_prompt: artifact.tensors.get(SOFT_PROMPT).cloned(),
                head: ClassificationHead::from_params(&artifact.tensors, tau)?,
            }),
            Method::Ch => Body::Ch(ClassificationHead::from_params(&artifact.tensors, tau)?),
            Method::PtT2t | Method::PtTs => Body::Prompt(artifact.tensor(SOFT_PROMPT)?.clone()),
            Method::Knn | Method::RadiusNn => {
                let t = artifact.tensor(INDEX_EMBEDDINGS)?;
                let rows = (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
                let index = NeighborIndex::new(rows, labels()?, l)?;
                if meta.method == Method::Knn {
                    Body::Knn { index, tau }
                } else {
                    Body::Radius { index, tau }
                }
            }
            Method::Gzip => {
                if meta.gzip_level != Some(GZIP_LEVEL) {
                    return Err(Error::Format("gzip artifact built at another compression level".into()));
                }
                let texts = meta
                    .index_texts
                    .clone()
                    .ok_or_else(|| Error::Format("artifact lacks index texts".into()))?
                    .into_iter()
                    .map(String::into_bytes)
                    .collect();
                Body::Gzip {
                    index: GzipIndex::new(texts, labels()?, l)?,
                    tau,
                }
            }
            Method::NShot | Method::NShotTs => {
                let examples = meta
                    .examples
                    .clone()
                    .ok_or_else(|| Error::Format("artifact lacks examples".into()))?
                    .into_iter()
                    .map(|r| r.resolve(taxonomy))
                    .collect::<Result<_>>()?;
                Body::NShot { examples }
            }
        };
        Self::assemble(meta.method, meta.config.clone(), taxonomy.clone(), body)
    }
}
