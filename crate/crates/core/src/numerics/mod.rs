//! Dense tensors, an eager reverse-mode tape, AdamW with parameter groups,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adamw_step, AdamWState, GradAccumulator, ParamGroup, ParamStore};
pub use tensor::Tensor;
