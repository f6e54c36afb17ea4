//! Frozen toy transformer and byte-level tokenizer.

pub mod model;
pub mod tokenizer;

pub use model::{Backbone, BackboneConfig, BoundWeights, ForwardOutput, LanguageModel, LogitRows, Pooling};
