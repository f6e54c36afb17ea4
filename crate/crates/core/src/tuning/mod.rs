//! Hyperparameter search: seeded random initialization, then Bayesian
//! optimization over a Gaussian-process surrogate.

mod gp;
mod search;
mod space;

pub use gp::{cholesky, expected_improvement, se_kernel, GaussianProcess, JITTER};
pub use search::{config_hash, load_history, run_search, Phase, SearchConfig, SearchResult, Trial, TrialStatus};
pub use space::{default_space, sample_config, Config, Kind, ParamSpec, Scale, SearchSpace};
