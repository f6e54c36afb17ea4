//! Seeded synthetic multi-label corpus with disjoint per-label vocabularies.

use std::collections::HashSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const SECTORS: &[&str] = &[
    "Health",
    "Healthcare IT",
    "Health Insurance",
    "Fintech",
    "Logistics",
    "Agriculture",
    "Energy",
    "Education",
    "Gaming",
    "Retail",
    "Robotics",
    "Semiconductors",
    "Telecom",
    "Travel",
    "Biotech",
    "Cybersecurity",
    "Real Estate",
    "Media",
    "Mining",
    "Aerospace",
];

const NOISE: &[&str] = &[
    "the", "and", "with", "global", "solutions", "group", "provider", "leading", "services",
    "platform", "company", "based", "for", "new", "team", "market",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub labels: usize,
    pub samples_per_label: usize,
    pub vocab_per_label: usize,
    /// Probability that any generated word is replaced by a shared noise word.
    pub noise: f64,
    /// Fraction of samples that receive a second label.
    pub multi_label_fraction: f64,
    pub keywords_per_sample: usize,
    pub description_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            labels: 8,
            samples_per_label: 60,
            vocab_per_label: 12,
            noise: 0.1,
            multi_label_fraction: 0.1,
            keywords_per_sample: 3,
            description_words: 4,
            seed: 0,
        }
    }
}

pub fn synth_label_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match SECTORS.get(i) {
            Some(s) => (*s).to_owned(),
            None => format!("Sector {i}"),
        })
        .collect()
}

/// Words for label `l`, spelled from a label-specific three-letter alphabet.
fn vocabulary(l: usize, size: usize, taken: &mut HashSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let letters: Vec<u8> = (0..3).map(|k| b'a' + ((3 * l + k) % 26) as u8).collect();
    let mut words = Vec::with_capacity(size);
    let mut attempts = 0usize;
    while words.len() < size {
        attempts += 1;
        let len = 4 + attempts / 500 + rng.random_range(0..3);
        let w: String = (0..len).map(|_| *letters.choose(rng).unwrap() as char).collect();
        if taken.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<(Taxonomy, Vec<Sample>)> {
    if cfg.labels == 0 || cfg.samples_per_label == 0 || cfg.vocab_per_label == 0 {
        return Err(Error::Config("synthetic corpus needs labels, samples and vocabulary".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || !(0.0..=1.0).contains(&cfg.multi_label_fraction) {
        return Err(Error::Config("noise and multi-label fraction must lie in [0, 1]".into()));
    }
    let taxonomy = Taxonomy::new(synth_label_names(cfg.labels))?;
    let mut rng = rng_for(cfg.seed, "synth");
    let mut taken: HashSet<String> = NOISE.iter().map(|s| s.to_string()).collect();
    let vocab: Vec<Vec<String>> = (0..cfg.labels)
        .map(|l| vocabulary(l, cfg.vocab_per_label, &mut taken, &mut rng))
        .collect();

    let n = cfg.labels * cfg.samples_per_label;
    let n_multi = (cfg.multi_label_fraction * n as f64).round() as usize;
    let mut multi = vec![false; n];
    if cfg.labels > 1 {
        for i in index::sample(&mut rng, n, n_multi) {
            multi[i] = true;
        }
    }

    let mut samples = Vec::with_capacity(n);
    for (idx, &is_multi) in multi.iter().enumerate() {
        let mut labels = vec![idx % cfg.labels];
        if is_multi {
            let mut second = rng.random_range(0..cfg.labels - 1);
            if second >= labels[0] {
                second += 1;
            }
            labels.push(second);
        }
        let word = |rng: &mut ChaCha8Rng| -> String {
            if rng.random_bool(cfg.noise) {
                (*NOISE.choose(rng).unwrap()).to_owned()
            } else {
                let l = *labels.choose(rng).unwrap();
                vocab[l].choose(rng).unwrap().clone()
            }
        };
        let keywords: Vec<String> = (0..cfg.keywords_per_sample).map(|_| word(&mut rng)).collect();
        let description: Vec<String> = (0..cfg.description_words).map(|_| word(&mut rng)).collect();
        let name = format!("{} {}", capitalize(NOISE.choose(&mut rng).unwrap()), idx);
        samples.push(Sample {
            id: format!("s{idx:05}"),
            name,
            keywords,
            description: description.join(" "),
            labels,
        });
    }
    Ok((taxonomy, samples))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::to_jsonl;

    #[test]
    fn deterministic_bytes() {
        let cfg = SynthConfig::default();
        let (t1, a) = synth_generate(&cfg).unwrap();
        let (t2, b) = synth_generate(&cfg).unwrap();
        assert_eq!(to_jsonl(&a, &t1).unwrap(), to_jsonl(&b, &t2).unwrap());
    }

    #[test]
    fn average_cardinality() {
        let cfg = SynthConfig {
            labels: 10,
            samples_per_label: 100,
            ..Default::default()
        };
        let (_, s) = synth_generate(&cfg).unwrap();
        let total: usize = s.iter().map(|s| s.labels.len()).sum();
        assert_eq!(total as f64 / s.len() as f64, 1.1);
    }

    #[test]
    fn vocabularies_disjoint() {
        let cfg = SynthConfig {
            labels: 20,
            noise: 0.0,
            multi_label_fraction: 0.0,
            ..Default::default()
        };
        let (_, s) = synth_generate(&cfg).unwrap();
        let mut owner = std::collections::HashMap::new();
        for x in &s {
            for w in x.keywords.iter().chain(x.description.split(' ').map(|w| w.to_owned()).collect::<Vec<_>>().iter()) {
                let prev = owner.insert(w.clone(), x.labels[0]);
                assert!(prev.is_none() || prev == Some(x.labels[0]), "{w}");
            }
        }
    }
}
