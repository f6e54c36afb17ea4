use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gp::GaussianProcess;
use super::space::{Config, SearchSpace};
use crate::error::{Error, Result};
use crate::seed::{rng_for, sha256_hex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Random,
    Bayes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "error")]
pub enum TrialStatus {
    Completed,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub config: Config,
    pub hash: String,
    /// Validation objective; present only for completed trials.
    pub objective: Option<f64>,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub seed: u64,
    pub duration_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_random: usize,
    pub n_bo: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_random: 25,
            n_bo: 15,
            candidates: 1024,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: Trial,
    pub history: Vec<Trial>,
    /// Parameters of the best config lying within 5% of a bound.
    pub near_boundary: Vec<String>,
}

/// Stable identifier of a config, independent of evaluation order.
pub fn config_hash(config: &Config) -> String {
    let json = serde_json::to_string(config).expect("finite config values");
    sha256_hex(json.as_bytes())[..16].to_owned()
}

pub fn load_history(path: &Path) -> Result<Vec<Trial>> {
    let f = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn propose(space: &SearchSpace, cfg: &SearchConfig, done: &[Trial], index: usize) -> Result<(Phase, Config)> {
    if index < cfg.n_random {
        let mut rng = rng_for(cfg.seed, &format!("random-{index}"));
        return Ok((Phase::Random, space.sample_with(&mut rng)));
    }
    let observed: Vec<&Trial> = done.iter().filter(|t| t.objective.is_some()).collect();
    let mut rng = rng_for(cfg.seed, &format!("bayes-{index}"));
    if observed.len() < 2 {
        return Ok((Phase::Bayes, space.sample_with(&mut rng)));
    }
    let x: Vec<Vec<f64>> = observed.iter().map(|t| space.normalize(&t.config)).collect();
    let y: Vec<f64> = observed.iter().map(|t| t.objective.expect("filtered")).collect();
    let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gp = GaussianProcess::fit(&x, &y)?;
    let mut choice: Option<(f64, Config)> = None;
    for _ in 0..cfg.candidates.max(1) {
        let c = space.sample_with(&mut rng);
        let ei = gp.expected_improvement(&space.normalize(&c), best);
        if choice.as_ref().is_none_or(|(b, _)| ei > *b) {
            choice = Some((ei, c));
        }
    }
    Ok((Phase::Bayes, choice.expect("at least one candidate").1))
}

/// Random initialization followed by GP-guided trials. With `history`, every
/// finished trial is appended there and a rerun reuses trials whose config
/// hash is already recorded.
pub fn run_search(
    objective: &mut dyn FnMut(&Config, u64) -> Result<f64>,
    space: &SearchSpace,
    cfg: &SearchConfig,
    history: Option<&Path>,
) -> Result<SearchResult> {
    space.validate()?;
    let mut recorded: HashMap<String, Trial> = HashMap::new();
    if let Some(p) = history {
        for t in load_history(p)? {
            recorded.insert(t.hash.clone(), t);
        }
    }
    let mut sink = match history {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    let mut done: Vec<Trial> = Vec::new();
    for index in 0..cfg.n_random + cfg.n_bo {
        let (phase, config) = propose(space, cfg, &done, index)?;
        let hash = config_hash(&config);
        if let Some(prev) = recorded.get(&hash) {
            log::info!("trial {index}: reusing recorded result for {hash}");
            done.push(Trial {
                index,
                phase,
                ..prev.clone()
            });
            continue;
        }
        let t0 = Instant::now();
        let outcome = objective(&config, cfg.seed);
        let duration_secs = t0.elapsed().as_secs_f64();
        let (objective_value, status) = match outcome {
            Ok(v) if v.is_finite() => (Some(v), TrialStatus::Completed),
            Ok(v) => (None, TrialStatus::Failed(format!("objective returned {v}"))),
            Err(e) => {
                log::warn!("trial {index} failed: {e}");
                (None, TrialStatus::Failed(e.to_string()))
            }
        };
        let trial = Trial {
            index,
            phase,
            config,
            hash: hash.clone(),
            objective: objective_value,
            status,
            seed: cfg.seed,
            duration_secs,
        };
        if let Some(f) = sink.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&trial)?)?;
            f.flush()?;
        }
        recorded.insert(hash, trial.clone());
        done.push(trial);
    }

    let best = done
        .iter()
        .filter(|t| t.objective.is_some())
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
        .cloned()
        .ok_or_else(|| Error::Undefined("no trial completed".into()))?;

    let near_boundary: Vec<String> = space
        .params
        .iter()
        .filter(|p| {
            let u = p.normalize(best.config[&p.name]);
            !(0.05..=0.95).contains(&u)
        })
        .map(|p| p.name.clone())
        .collect();
    for name in &near_boundary {
        log::warn!("best `{name}` = {} lies within 5% of its search bounds; consider widening them", best.config[name]);
    }
    Ok(SearchResult {
        best,
        history: done,
        near_boundary,
    })
}
