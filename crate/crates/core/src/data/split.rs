//! Multi-label iterative stratification with minimum per-split label counts.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

/// Partition of sample ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn ids(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    /// Samples of one subset, in split-file order.
    pub fn select<'a>(&self, samples: &'a [Sample], subset: Subset) -> Result<Vec<&'a Sample>> {
        let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        self.ids(subset)
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("split references unknown id `{id}`")))
            })
            .collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub min_counts: [usize; 3],
    pub seed: u64,
    pub retries: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.75, 0.10, 0.15],
            min_counts: [15, 2, 3],
            seed: 0,
            retries: 10,
        }
    }
}

/// Per-label minimums, scaled down for labels too rare to meet the full ones.
fn effective_minimums(counts: &[usize], min_counts: [usize; 3], taxonomy: &Taxonomy) -> Vec<[usize; 3]> {
    let required: usize = min_counts.iter().sum();
    counts
        .iter()
        .enumerate()
        .map(|(l, &c)| {
            if c >= required || required == 0 {
                min_counts
            } else {
                log::warn!(
                    "label `{}` occurs {c} times, fewer than the {required} the minimums need; relaxing",
                    taxonomy.name(l)
                );
                min_counts.map(|m| m * c / required)
            }
        })
        .collect()
}

/// Assigns each sample to train/val/test (0/1/2) by iterative stratification.
fn stratify_once(samples: &[Sample], n_labels: usize, ratios: [f64; 3], seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, "stratify");
    let n = samples.len();
    let mut counts = vec![0usize; n_labels];
    for s in samples {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    let mut want_label: Vec<[f64; 3]> = counts
        .iter()
        .map(|&c| ratios.map(|r| r * c as f64))
        .collect();
    let mut want_total = ratios.map(|r| r * n as f64);

    let mut assignment = vec![usize::MAX; n];
    let mut remaining = counts.clone();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, s) in samples.iter().enumerate() {
        for &l in &s.labels {
            by_label[l].push(i);
        }
    }

    loop {
        let Some(label) = (0..n_labels)
            .filter(|&l| remaining[l] > 0)
            .min_by_key(|&l| (remaining[l], l))
        else {
            break;
        };
        let mut pool: Vec<usize> = by_label[label]
            .iter()
            .copied()
            .filter(|&i| assignment[i] == usize::MAX)
            .collect();
        pool.shuffle(&mut rng);
        for i in pool {
            let best_label = want_label[label].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..3).filter(|&k| want_label[label][k] == best_label).collect();
            let best_total = tied.iter().map(|&k| want_total[k]).fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = tied.into_iter().filter(|&k| want_total[k] == best_total).collect();
            let k = tied[rng.random_range(0..tied.len())];
            assignment[i] = k;
            want_total[k] -= 1.0;
            for &l in &samples[i].labels {
                want_label[l][k] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }
    // Samples are never label-free after resolution, but keep the
    // assignment total.
    for a in assignment.iter_mut().filter(|a| **a == usize::MAX) {
        *a = 0;
    }
    assignment
}

/// Subset sizes nearest to `ratios · n`, by largest remainder.
fn target_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * n as f64);
    let mut sizes = raw.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    sizes
}

/// Moves samples out of oversized subsets until every subset has its target
/// size, picking each time the move that disturbs per-label proportions least
/// and never taking a label below its minimum.
fn rebalance(samples: &[Sample], assignment: &mut [usize], n_labels: usize, ratios: [f64; 3], minimums: &[[usize; 3]]) {
    let target = target_sizes(samples.len(), ratios);
    let mut per = vec![[0usize; 3]; n_labels];
    let mut totals = vec![0usize; n_labels];
    let mut sizes = [0usize; 3];
    for (s, &k) in samples.iter().zip(assignment.iter()) {
        sizes[k] += 1;
        for &l in &s.labels {
            per[l][k] += 1;
            totals[l] += 1;
        }
    }
    loop {
        let Some(from) = (0..3).find(|&k| sizes[k] > target[k]) else { break };
        let Some(to) = (0..3).find(|&k| sizes[k] < target[k]) else { break };
        let dev = |l: usize, k: usize, c: usize| {
            let d = c as f64 - ratios[k] * totals[l] as f64;
            d * d
        };
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in samples.iter().enumerate() {
            if assignment[i] != from || s.labels.iter().any(|&l| per[l][from] <= minimums[l][from]) {
                continue;
            }
            let cost: f64 = s
                .labels
                .iter()
                .map(|&l| {
                    dev(l, from, per[l][from] - 1) + dev(l, to, per[l][to] + 1)
                        - dev(l, from, per[l][from])
                        - dev(l, to, per[l][to])
                })
                .sum();
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, i));
            }
        }
        let Some((_, i)) = best else { break };
        assignment[i] = to;
        sizes[from] -= 1;
        sizes[to] += 1;
        for &l in &samples[i].labels {
            per[l][from] -= 1;
            per[l][to] += 1;
        }
    }
}

/// Labels whose per-split counts miss their minimums.
fn violations(
    samples: &[Sample],
    assignment: &[usize],
    minimums: &[[usize; 3]],
) -> Vec<usize> {
    let mut per = vec![[0usize; 3]; minimums.len()];
    for (s, &k) in samples.iter().zip(assignment) {
        for &l in &s.labels {
            per[l][k] += 1;
        }
    }
    (0..minimums.len())
        .filter(|&l| (0..3).any(|k| per[l][k] < minimums[l][k]))
        .collect()
}

pub fn stratified_split(samples: &[Sample], taxonomy: &Taxonomy, cfg: &SplitConfig) -> Result<Split> {
    let total: f64 = cfg.ratios.iter().sum();
    if cfg.ratios.iter().any(|&r| r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {:?}", cfg.ratios)));
    }
    let n_labels = taxonomy.len();
    let mut counts = vec![0usize; n_labels];
    for s in samples {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    let minimums = effective_minimums(&counts, cfg.min_counts, taxonomy);

    let mut last_bad = Vec::new();
    for attempt in 0..=cfg.retries {
        let seed = if attempt == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, &format!("retry-{attempt}"))
        };
        let mut assignment = stratify_once(samples, n_labels, cfg.ratios, seed);
        rebalance(samples, &mut assignment, n_labels, cfg.ratios, &minimums);
        let bad = violations(samples, &assignment, &minimums);
        if bad.is_empty() {
            let mut split = Split {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (s, &k) in samples.iter().zip(&assignment) {
                match k {
                    0 => split.train.push(s.id.clone()),
                    1 => split.val.push(s.id.clone()),
                    _ => split.test.push(s.id.clone()),
                }
            }
            return Ok(split);
        }
        log::debug!("split attempt {attempt} missed minimums for {} labels", bad.len());
        last_bad = bad;
    }
    Err(Error::InfeasibleSplit(
        last_bad.into_iter().map(|l| taxonomy.name(l).to_owned()).collect(),
    ))
}

/// Per-label counts for each subset, `[train, val, test]`.
pub fn label_counts(samples: &[Sample], split: &Split, n_labels: usize) -> Result<Vec<[usize; 3]>> {
    let mut per = vec![[0usize; 3]; n_labels];
    for (k, subset) in [Subset::Train, Subset::Val, Subset::Test].into_iter().enumerate() {
        for s in split.select(samples, subset)? {
            for &l in &s.labels {
                per[l][k] += 1;
            }
        }
    }
    Ok(per)
}

/// `n_max / n_c` for each label, counted over `train`.
pub fn class_weights(train: &[&Sample], n_labels: usize) -> Result<Vec<f64>> {
    let counts = train_counts(train, n_labels);
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("label {l} has no training samples")));
    }
    let max = *counts.iter().max().expect("non-empty taxonomy") as f64;
    Ok(counts.iter().map(|&c| max / c as f64).collect())
}

pub fn train_counts(train: &[&Sample], n_labels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_labels];
    for s in train {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    counts
}

/// Label indices sorted by descending training frequency, ties by index.
pub fn label_frequency_order(train: &[&Sample], n_labels: usize) -> Vec<usize> {
    let counts = train_counts(train, n_labels);
    let mut order: Vec<usize> = (0..n_labels).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(id: usize, labels: Vec<usize>) -> Sample {
        Sample {
            id: format!("s{id}"),
            name: String::new(),
            keywords: Vec::new(),
            description: String::new(),
            labels,
        }
    }

    fn taxonomy(n: usize) -> Taxonomy {
        Taxonomy::new((0..n).map(|i| format!("L{i}")).collect()).unwrap()
    }

    #[test]
    fn single_label_sizes() {
        let samples: Vec<Sample> = (0..100).map(|i| mk(i, vec![0])).collect();
        let cfg = SplitConfig::default();
        let split = stratified_split(&samples, &taxonomy(1), &cfg).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (75, 10, 15));
    }

    #[test]
    fn weights_from_counts() {
        let samples: Vec<Sample> = (0..325).map(|i| mk(i, vec![usize::from(i >= 300)])).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        assert_eq!(class_weights(&refs, 2).unwrap(), vec![1.0, 12.0]);
    }

    #[test]
    fn zero_count_weight_is_an_error() {
        let samples = [mk(0, vec![0])];
        let refs: Vec<&Sample> = samples.iter().collect();
        assert!(class_weights(&refs, 2).is_err());
    }

    #[test]
    fn frequency_order_and_ties() {
        let mut samples = Vec::new();
        for i in 0..5 {
            samples.push(mk(i, vec![0]));
        }
        for i in 5..14 {
            samples.push(mk(i, vec![1]));
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        assert_eq!(label_frequency_order(&refs, 2), vec![1, 0]);
        let tied: Vec<&Sample> = samples[..10].iter().collect();
        // 5 of label 0 and 5 of label 1
        assert_eq!(label_frequency_order(&tied, 2), vec![0, 1]);
    }

    #[test]
    fn infeasible_minimums_list_labels() {
        let samples: Vec<Sample> = (0..30).map(|i| mk(i, vec![0])).collect();
        let cfg = SplitConfig {
            min_counts: [15, 12, 3],
            retries: 2,
            ..Default::default()
        };
        match stratified_split(&samples, &taxonomy(1), &cfg) {
            Err(Error::InfeasibleSplit(labels)) => assert_eq!(labels, vec!["L0".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
