//! Prompt tuning with an embedding classification head (PTEC) for
//! multi-label text classification, together with the baselines it is
//! compared against: prompt-tuned generation with and without trie-constrained
//! decoding, a frozen-embedding classification head, nearest neighbors, gzip
//! distance voting and in-context learning.
//!
//! Everything runs on a small seeded byte-level transformer with its own
//! reverse-mode autodiff, so results are reproducible bit for bit.

pub mod backbone;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod methods;
pub mod metrics;
pub mod numerics;
pub mod seed;
pub mod trie;
pub mod tuning;

pub use backbone::{Backbone, BackboneConfig, LanguageModel, Pooling};
pub use error::{Error, Result};
pub use numerics::{Gradients, Graph, ParamStore, Tensor, Var};
pub use data::{Sample, Split, Subset, Taxonomy};
pub use methods::{Method, MethodConfig, Prediction, Trained};
