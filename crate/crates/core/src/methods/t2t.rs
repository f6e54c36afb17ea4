//! Prompt tuning for label generation, decoded freely or through the trie.

use rand::seq::index;
use rand::Rng;

use super::nte::{segment_nll_sum, LabelSegment};
use super::train::{run_epochs, Checkpoint, LoopConfig};
use super::trained::{prompt_ids, InstanceWeight, MethodConfig};
use super::{GeneratedLabels, Method, Prediction};
use crate::backbone::tokenizer::{detokenize, tokenize, BOS, EOS, SEP};
use crate::backbone::{LanguageModel, LogitRows};
use crate::data::{class_weights, label_frequency_order, Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::metrics::flops::{flops_encoder, TRAIN_MULTIPLIER};
use crate::numerics::{ParamGroup, Tensor};
use crate::seed::rng_for;
use crate::trie::{constrained_decode, masked_argmax, LabelTrie, LogitsProvider};

use super::head::SOFT_PROMPT;

/// Rows of the token-embedding table at randomly drawn occurrences of
/// label-name tokens. Draws without replacement while the pool suffices.
pub fn soft_prompt_init(model: &dyn LanguageModel, taxonomy: &Taxonomy, m: usize, seed: u64) -> Result<Tensor> {
    let pool: Vec<u32> = taxonomy.labels().iter().flat_map(|l| tokenize(l.as_bytes())).collect();
    if pool.is_empty() {
        return Err(Error::Config("taxonomy has no label tokens".into()));
    }
    let mut rng = rng_for(seed, "soft-prompt-init");
    let ids: Vec<u32> = if pool.len() >= m {
        index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..m).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    };
    model.token_embeddings(&ids)
}

#[derive(Clone, Debug, PartialEq)]
pub struct T2tTarget {
    /// Label tokens with SEP between labels and a final EOS.
    pub tokens: Vec<u32>,
    /// Segments indexed relative to the first target position.
    pub segments: Vec<LabelSegment>,
}

/// Target sequence with labels ordered by `order` (most frequent first).
pub fn t2t_target(gold: &[usize], order: &[usize], taxonomy: &Taxonomy, weight: f64) -> Result<T2tTarget> {
    if gold.is_empty() {
        return Err(Error::Data("sample without labels".into()));
    }
    let rank = |l: usize| order.iter().position(|&o| o == l);
    let mut labels = gold.to_vec();
    for &l in &labels {
        if l >= taxonomy.len() || rank(l).is_none() {
            return Err(Error::Data(format!("label {l} outside taxonomy")));
        }
    }
    labels.sort_by_key(|&l| rank(l));
    labels.dedup();
    let mut tokens = Vec::new();
    let mut segments = Vec::new();
    for (k, &l) in labels.iter().enumerate() {
        let start = tokens.len();
        let mut seg = tokenize(taxonomy.name(l).as_bytes());
        seg.push(if k + 1 == labels.len() { EOS } else { SEP });
        tokens.extend_from_slice(&seg);
        segments.push(LabelSegment {
            start,
            targets: seg,
            weight,
        });
    }
    Ok(T2tTarget { tokens, segments })
}

fn instance_weight(gold: &[usize], weights: &[f64], kind: InstanceWeight) -> f64 {
    let ws = gold.iter().map(|&l| weights[l]);
    match kind {
        InstanceWeight::Max => ws.fold(0.0, f64::max),
        InstanceWeight::Mean => ws.sum::<f64>() / gold.len() as f64,
    }
}

pub struct PromptTraining {
    pub soft_prompt: Tensor,
    pub checkpoint: Checkpoint,
    pub flops: u128,
}

/// Teacher-forced prompt tuning: `SP ⊕ prompt ⊕ BOS ⊕ target`, loss on the
/// target span only.
pub fn train_pt_t2t(
    model: &dyn LanguageModel,
    taxonomy: &Taxonomy,
    train: &[&Sample],
    cfg: &MethodConfig,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<PromptTraining> {
    let m = cfg.sp_len;
    if m == 0 {
        return Err(Error::Config("prompt tuning needs a soft prompt of length ≥ 1".into()));
    }
    let weights = class_weights(train, taxonomy.len())?;
    let order = label_frequency_order(train, taxonomy.len());
    let max_seq = model.config().max_seq;

    let mut inputs = Vec::with_capacity(train.len());
    for s in train {
        let target = t2t_target(&s.labels, &order, taxonomy, instance_weight(&s.labels, &weights, cfg.instance_weight))?;
        let budget = max_seq
            .checked_sub(m + target.tokens.len())
            .filter(|&b| b >= 2)
            .ok_or_else(|| Error::Config(format!("target of sample {} leaves no room for its prompt", s.id)))?;
        let prompt = prompt_ids(s, budget)?;
        let p = prompt.len();
        let mut ids = prompt;
        ids.push(BOS);
        ids.extend_from_slice(&target.tokens[..target.tokens.len() - 1]);
        inputs.push((ids, p, target));
    }

    let mut state = match resume {
        Some(c) => c,
        None => {
            let mut params = crate::ParamStore::new();
            params.insert(SOFT_PROMPT.into(), soft_prompt_init(model, taxonomy, m, cfg.seed)?);
            Checkpoint::new(params, vec![ParamGroup::new("soft-prompt", vec![SOFT_PROMPT.into()], cfg.sp_lr, 0.0)])
        }
    };
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    run_epochs(
        &mut state,
        train.len(),
        &loop_cfg,
        |g, vars, i, batch| {
            let (ids, p, target) = &inputs[i];
            let out = model.forward(g, Some(vars[SOFT_PROMPT]), ids, LogitRows::From(m + p))?;
            let nll = segment_nll_sum(g, out.logits.expect("requested"), &target.segments)?;
            // Batch mean over label segments, kept exact under accumulation.
            let total: usize = batch.iter().map(|&j| inputs[j].2.segments.len()).sum();
            g.scale(nll, batch.len() as f64 / total as f64)
        },
        on_epoch,
    )?;

    let cfg_b = model.config();
    let v = model.vocab_size() as u128;
    let per_epoch: u128 = inputs
        .iter()
        .map(|(ids, _, t)| flops_encoder(cfg_b, m + ids.len()) + 2 * t.tokens.len() as u128 * cfg_b.d_model as u128 * v)
        .sum();
    let epochs_run = state.epochs_done as u128;
    Ok(PromptTraining {
        soft_prompt: state.params[SOFT_PROMPT].clone(),
        checkpoint: state,
        flops: TRAIN_MULTIPLIER * per_epoch * epochs_run,
    })
}

/// Feeds `prefix ⊕ context ⊕ generated` to the model and records the cost of
/// every call.
pub struct ModelLogits<'a> {
    pub model: &'a dyn LanguageModel,
    pub prefix: Option<&'a Tensor>,
    pub context: Vec<u32>,
    pub flops: u128,
    pub calls: usize,
}

impl<'a> ModelLogits<'a> {
    pub fn new(model: &'a dyn LanguageModel, prefix: Option<&'a Tensor>, context: Vec<u32>) -> Self {
        Self {
            model,
            prefix,
            context,
            flops: 0,
            calls: 0,
        }
    }

    fn room(&self) -> usize {
        let m = self.prefix.map_or(0, Tensor::rows);
        self.model.config().max_seq.saturating_sub(m + self.context.len())
    }
}

impl LogitsProvider for ModelLogits<'_> {
    fn next_logits(&mut self, generated: &[u32]) -> Result<Vec<f64>> {
        let mut ids = self.context.clone();
        ids.extend_from_slice(generated);
        let m = self.prefix.map_or(0, Tensor::rows);
        let cfg = self.model.config();
        self.flops += flops_encoder(cfg, m + ids.len()) + 2 * cfg.d_model as u128 * self.model.vocab_size() as u128;
        self.calls += 1;
        self.model.next_token_logits(self.prefix, &ids)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct T2tDecode {
    pub tokens: Vec<u32>,
    pub generated: GeneratedLabels,
    pub labels: Vec<usize>,
    pub flops: u128,
}

/// Splits generated tokens on SEP up to the first EOS and matches each piece
/// against the taxonomy.
pub fn parse_generated(tokens: &[u32], taxonomy: &Taxonomy) -> (GeneratedLabels, Vec<usize>) {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    let body = &tokens[..end];
    let mut out = GeneratedLabels {
        tokens: tokens.len(),
        ..Default::default()
    };
    let mut labels = Vec::new();
    if body.is_empty() {
        return (out, labels);
    }
    for piece in body.split(|&t| t == SEP) {
        let s = String::from_utf8_lossy(&detokenize(piece)).into_owned();
        if out.strings.contains(&s) {
            out.duplicates += 1;
        }
        match taxonomy.index_of(&s) {
            Some(l) => labels.push(l),
            None => out.invalid += 1,
        }
        out.strings.push(s);
    }
    labels.sort_unstable();
    labels.dedup();
    (out, labels)
}

/// Unconstrained greedy decode after `context ⊕ BOS`.
pub fn decode_t2t(
    model: &dyn LanguageModel,
    soft_prompt: Option<&Tensor>,
    context: &[u32],
    taxonomy: &Taxonomy,
    max_tokens: usize,
) -> Result<T2tDecode> {
    let mut ctx = context.to_vec();
    ctx.push(BOS);
    let mut provider = ModelLogits::new(model, soft_prompt, ctx);
    let cap = max_tokens.min(provider.room());
    let all: Vec<u32> = (0..model.vocab_size() as u32).collect();
    let mut tokens = Vec::new();
    while tokens.len() < cap {
        let logits = provider.next_logits(&tokens)?;
        let t = masked_argmax(&logits, &all).expect("non-empty vocabulary");
        tokens.push(t);
        if t == EOS {
            break;
        }
    }
    let (generated, labels) = parse_generated(&tokens, taxonomy);
    Ok(T2tDecode {
        tokens,
        generated,
        labels,
        flops: provider.flops,
    })
}

/// Trie-constrained decode after `context ⊕ BOS`.
pub fn predict_pt_ts(
    model: &dyn LanguageModel,
    soft_prompt: Option<&Tensor>,
    context: &[u32],
    trie: &LabelTrie,
    taxonomy: &Taxonomy,
    max_labels: usize,
    method: Method,
) -> Result<Prediction> {
    let mut ctx = context.to_vec();
    ctx.push(BOS);
    let mut provider = ModelLogits::new(model, soft_prompt, ctx);
    let out = constrained_decode(&mut provider, trie, max_labels)?;
    let (generated, _) = parse_generated(&out.tokens, taxonomy);
    let mut p = Prediction::from_labels(method, out.labels, Some(provider.flops));
    p.generated = Some(generated);
    Ok(p)
}

pub(crate) fn prediction_from_decode(method: Method, d: T2tDecode) -> Prediction {
    let mut p = Prediction::from_labels(method, d.labels, Some(d.flops));
    p.generated = Some(d.generated);
    p
}
