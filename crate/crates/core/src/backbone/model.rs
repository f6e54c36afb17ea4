use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenizer::{PAD, VOCAB_SIZE};
use crate::container;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::seed::rng_for;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Hidden state of the final non-PAD position.
    #[default]
    LastToken,
    /// Mean over all non-PAD positions, soft-prompt rows included.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub seed: u64,
    #[serde(default)]
    pub pooling: Pooling,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            max_seq: 512,
            seed: 0,
            pooling: Pooling::LastToken,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return Err(Error::Config("backbone dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Which rows of the language head to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogitRows {
    None,
    All,
    /// Rows `from..seq`.
    From(usize),
    Last,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Final-layer-norm hidden states, `seq × d_model`.
    pub hidden: Var,
    /// Next-token logits for the requested rows, `rows × vocab`.
    pub logits: Option<Var>,
    /// Sequence position of the first logits row.
    pub logits_from: usize,
    pub prefix_len: usize,
}

/// Interface the classification methods need from a frozen language model.
///
/// [`Backbone`] is the reference implementation; a real model can be wrapped
/// behind the same calls.
pub trait LanguageModel: Send + Sync {
    fn config(&self) -> &BackboneConfig;

    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    /// Hex digest identifying the frozen weights.
    fn checksum(&self) -> String;

    /// Rows of the token-embedding table.
    fn token_embeddings(&self, ids: &[u32]) -> Result<Tensor>;

    /// Runs the model on `prefix ⊕ embed(ids)`. `prefix` is `m × d_model`.
    fn forward(&self, g: &mut Graph, prefix: Option<Var>, ids: &[u32], rows: LogitRows) -> Result<ForwardOutput>;

    fn pooled_embedding(&self, g: &mut Graph, prefix: Option<Var>, ids: &[u32]) -> Result<Var> {
        let last = ids
            .iter()
            .rposition(|&t| t != PAD)
            .ok_or_else(|| Error::Data("pooled embedding of an all-PAD input".into()))?;
        let ids = &ids[..=last];
        let out = self.forward(g, prefix, ids, LogitRows::None)?;
        let seq = out.prefix_len + ids.len();
        match self.config().pooling {
            Pooling::LastToken => g.row(out.hidden, seq - 1),
            Pooling::Mean => {
                let mut w: Vec<f64> = std::iter::repeat(1.0)
                    .take(out.prefix_len)
                    .chain(ids.iter().map(|&t| if t == PAD { 0.0 } else { 1.0 }))
                    .collect();
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                let weights = g.constant(Tensor::vector(w));
                g.matmul(weights, out.hidden)
            }
        }
    }

    /// Logits for the token following `prefix ⊕ ids`.
    fn next_token_logits(&self, prefix: Option<&Tensor>, ids: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = prefix.map(|t| g.constant(t.clone()));
        let out = self.forward(&mut g, p, ids, LogitRows::Last)?;
        Ok(g.value(out.logits.expect("requested")).data().to_vec())
    }
}

/// Weight bindings for one graph, keyed like [`Backbone::weight`].
pub type BoundWeights = BTreeMap<String, Var>;

/// The seeded toy decoder-only transformer: learned absolute positions,
/// pre-layer-norm blocks, GELU MLPs and a separate language head.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    weights: BTreeMap<String, Arc<Tensor>>,
}

fn layer_key(l: usize, name: &str) -> String {
    format!("layer{l}.{name}")
}

impl Backbone {
    pub fn init(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, "backbone-init");
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let (d, f, v) = (config.d_model, config.d_ff, VOCAB_SIZE);

        let mut weights = BTreeMap::new();
        let mut random = |name: String, rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            weights.insert(name, Arc::new(Tensor::matrix(rows, cols, data).expect("shape")));
        };
        random("tok_emb".into(), v, d);
        random("pos_emb".into(), config.max_seq, d);
        for l in 0..config.layers {
            for name in ["wq", "wk", "wv", "wo"] {
                random(layer_key(l, name), d, d);
            }
            random(layer_key(l, "w1"), d, f);
            random(layer_key(l, "w2"), f, d);
        }
        random("lm_head".into(), d, v);

        let ones = |n| Arc::new(Tensor::full(&[n], 1.0));
        let zeros = |n| Arc::new(Tensor::zeros(&[n]));
        for l in 0..config.layers {
            weights.insert(layer_key(l, "ln1.gain"), ones(d));
            weights.insert(layer_key(l, "ln1.bias"), zeros(d));
            weights.insert(layer_key(l, "ln2.gain"), ones(d));
            weights.insert(layer_key(l, "ln2.bias"), zeros(d));
            weights.insert(layer_key(l, "b1"), zeros(f));
            weights.insert(layer_key(l, "b2"), zeros(d));
        }
        weights.insert("ln_f.gain".into(), ones(d));
        weights.insert("ln_f.bias".into(), zeros(d));
        Ok(Self { config, weights })
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name).map(|t| t.as_ref())
    }

    pub fn weight_names(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn tensor_checksum(&self, name: &str) -> Option<String> {
        self.weight(name).map(Tensor::checksum)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: BTreeMap<String, Tensor> = self
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), v.as_ref().clone()))
            .collect();
        container::write(path, &serde_json::json!({ "config": self.config }), &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut meta, tensors) = container::read(path)?;
        let config: BackboneConfig = serde_json::from_value(
            meta.remove("config")
                .ok_or_else(|| Error::Format("weight file lacks config".into()))?,
        )?;
        config.validate()?;
        let expected = Self::init_shapes(&config);
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => return Err(Error::Format(format!("tensor `{name}` missing or misshapen"))),
            }
        }
        let weights = tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
        Ok(Self { config, weights })
    }

    fn init_shapes(config: &BackboneConfig) -> BTreeMap<String, Vec<usize>> {
        let (d, f, v) = (config.d_model, config.d_ff, VOCAB_SIZE);
        let mut s = BTreeMap::new();
        s.insert("tok_emb".to_string(), vec![v, d]);
        s.insert("pos_emb".to_string(), vec![config.max_seq, d]);
        s.insert("lm_head".to_string(), vec![d, v]);
        s.insert("ln_f.gain".to_string(), vec![d]);
        s.insert("ln_f.bias".to_string(), vec![d]);
        for l in 0..config.layers {
            for name in ["wq", "wk", "wv", "wo"] {
                s.insert(layer_key(l, name), vec![d, d]);
            }
            s.insert(layer_key(l, "w1"), vec![d, f]);
            s.insert(layer_key(l, "w2"), vec![f, d]);
            for name in ["ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias", "b2"] {
                s.insert(layer_key(l, name), vec![d]);
            }
            s.insert(layer_key(l, "b1"), vec![f]);
        }
        s
    }

    /// Puts every weight on `g`, as trainable leaves when `trainable` is set
    /// (only gradient checks do this; training keeps the backbone frozen).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundWeights> {
        let mut out = BoundWeights::new();
        for (name, t) in &self.weights {
            let v = if trainable {
                g.param(name.clone(), Arc::clone(t))?
            } else {
                g.constant(Arc::clone(t))
            };
            out.insert(name.clone(), v);
        }
        Ok(out)
    }

    pub fn forward_bound(
        &self,
        g: &mut Graph,
        w: &BoundWeights,
        prefix: Option<Var>,
        ids: &[u32],
        rows: LogitRows,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let m = match prefix {
            Some(p) => {
                if g.value(p).cols() != d || g.shape(p).len() != 2 {
                    return Err(Error::shape(
                        "forward",
                        format!("prefix {:?} must be m x {d}", g.shape(p)),
                    ));
                }
                g.value(p).rows()
            }
            None => 0,
        };
        let seq = m + ids.len();
        if seq == 0 {
            return Err(Error::Data("forward on an empty sequence".into()));
        }
        if seq > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: seq,
                max_seq: cfg.max_seq,
                prefix: m,
                tokens: ids.len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary")));
        }

        let mut parts = Vec::with_capacity(2);
        if let Some(p) = prefix {
            let pos: Vec<usize> = (0..m).collect();
            let pe = g.gather(w["pos_emb"], &pos)?;
            parts.push(g.add(p, pe)?);
        }
        if !ids.is_empty() {
            let tok: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
            let te = g.gather(w["tok_emb"], &tok)?;
            let pos: Vec<usize> = (m..seq).collect();
            let pe = g.gather(w["pos_emb"], &pos)?;
            parts.push(g.add(te, pe)?);
        }
        let mut x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };

        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for l in 0..cfg.layers {
            let key = |n: &str| w[&layer_key(l, n)];
            let h = g.layer_norm(x, key("ln1.gain"), key("ln1.bias"), LN_EPS)?;
            let q = g.matmul(h, key("wq"))?;
            let k = g.matmul(h, key("wk"))?;
            let v = g.matmul(h, key("wv"))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hh in 0..cfg.heads {
                let qh = g.slice_cols(q, hh * dh, dh)?;
                let kh = g.slice_cols(k, hh * dh, dh)?;
                let vh = g.slice_cols(v, hh * dh, dh)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, inv_sqrt)?;
                let probs = g.softmax(scores, true)?;
                heads.push(g.matmul(probs, vh)?);
            }
            let att = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            };
            let att = g.matmul(att, key("wo"))?;
            x = g.add(x, att)?;

            let h = g.layer_norm(x, key("ln2.gain"), key("ln2.bias"), LN_EPS)?;
            let f = g.matmul(h, key("w1"))?;
            let f = g.add_row(f, key("b1"))?;
            let f = g.gelu(f)?;
            let f = g.matmul(f, key("w2"))?;
            let f = g.add_row(f, key("b2"))?;
            x = g.add(x, f)?;
        }
        let hidden = g.layer_norm(x, w["ln_f.gain"], w["ln_f.bias"], LN_EPS)?;

        let from = match rows {
            LogitRows::None => None,
            LogitRows::All => Some(0),
            LogitRows::From(r) => Some(r),
            LogitRows::Last => Some(seq - 1),
        };
        let logits = match from {
            None => None,
            Some(r) if r >= seq => {
                return Err(Error::shape("forward", format!("logit row {r} beyond sequence {seq}")))
            }
            Some(0) => Some(g.matmul(hidden, w["lm_head"])?),
            Some(r) => {
                let tail = g.slice_rows(hidden, r, seq - r)?;
                Some(g.matmul(tail, w["lm_head"])?)
            }
        };
        Ok(ForwardOutput {
            hidden,
            logits,
            logits_from: from.unwrap_or(seq),
            prefix_len: m,
        })
    }
}

impl LanguageModel for Backbone {
    fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.weights {
            h.update(name.as_bytes());
            h.update(t.checksum().as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn token_embeddings(&self, ids: &[u32]) -> Result<Tensor> {
        let table = &self.weights["tok_emb"];
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= VOCAB_SIZE {
                return Err(Error::Data(format!("token id {id} outside vocabulary")));
            }
            data.extend_from_slice(table.row(id as usize));
        }
        Tensor::matrix(ids.len(), d, data)
    }

    fn forward(&self, g: &mut Graph, prefix: Option<Var>, ids: &[u32], rows: LogitRows) -> Result<ForwardOutput> {
        let w = self.bind(g, false)?;
        self.forward_bound(g, &w, prefix, ids, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::tokenizer::{tokenize, BOS};

    fn tiny() -> Backbone {
        Backbone::init(BackboneConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            max_seq: 32,
            seed: 3,
            pooling: Pooling::LastToken,
        })
        .unwrap()
    }

    #[test]
    fn single_bos_shapes() {
        let b = tiny();
        let mut g = Graph::new();
        let out = b.forward(&mut g, None, &[BOS], LogitRows::All).unwrap();
        assert_eq!(g.shape(out.hidden), &[1, 16]);
        assert_eq!(g.shape(out.logits.unwrap()), &[1, VOCAB_SIZE]);
    }

    #[test]
    fn prefix_shifts_rows() {
        let b = tiny();
        let ids = tokenize(b"hello");
        let mut g = Graph::new();
        let plain = b.forward(&mut g, None, &ids, LogitRows::None).unwrap();
        let prefix = g.constant(Tensor::zeros(&[10, 16]));
        let with = b.forward(&mut g, Some(prefix), &ids, LogitRows::None).unwrap();
        assert_eq!(g.value(with.hidden).rows(), g.value(plain.hidden).rows() + 10);
    }

    #[test]
    fn overflow_names_lengths() {
        let b = tiny();
        let mut g = Graph::new();
        let ids = vec![65u32; 40];
        match b.forward(&mut g, None, &ids, LogitRows::None) {
            Err(Error::SequenceTooLong { len, max_seq, .. }) => {
                assert_eq!((len, max_seq), (40, 32));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_head_split_rejected() {
        let cfg = BackboneConfig {
            d_model: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(Backbone::init(cfg).is_err());
    }

    #[test]
    fn last_row_logits_match_full() {
        let b = tiny();
        let ids = tokenize(b"abc");
        let last = b.next_token_logits(None, &ids).unwrap();
        let mut g = Graph::new();
        let out = b.forward(&mut g, None, &ids, LogitRows::All).unwrap();
        let all = g.value(out.logits.unwrap());
        assert_eq!(all.row(2), last.as_slice());
    }

    #[test]
    fn mean_pooling_ignores_pad() {
        let mut cfg = tiny().config().clone();
        cfg.pooling = Pooling::Mean;
        let b = Backbone::init(cfg).unwrap();
        let mut g = Graph::new();
        let a = b.pooled_embedding(&mut g, None, &tokenize(b"xyz")).unwrap();
        let mut ids = tokenize(b"xyz");
        ids.extend([PAD, PAD]);
        let c = b.pooled_embedding(&mut g, None, &ids).unwrap();
        assert_eq!(g.value(a).data(), g.value(c).data());
    }
}
