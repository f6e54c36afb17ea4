pub mod eval;
pub mod flops;
pub mod infer;
pub mod report;
pub mod split;
pub mod synth;
pub mod train;
pub mod tune;
