use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};

use ptec_core::data::{label_counts, load_dataset, stratified_split, SplitConfig};

use crate::args::parse_triple;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.75,0.10,0.15", value_parser = parse_triple::<f64>)]
    ratios: [f64; 3],
    /// Minimum per-label counts in train, validation and test.
    #[arg(long, default_value = "15,2,3", value_parser = parse_triple::<usize>)]
    min_counts: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attempts with fresh sub-seeds before giving up.
    #[arg(long, default_value_t = 10)]
    retries: usize,
    /// Output split file.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(a: Args) -> Result<()> {
    let (taxonomy, samples) = load_dataset(&a.dataset, &a.taxonomy)?;
    let cfg = SplitConfig {
        ratios: a.ratios,
        min_counts: a.min_counts,
        seed: a.seed,
        retries: a.retries,
    };
    let split = stratified_split(&samples, &taxonomy, &cfg)?;
    fs::write(&a.out, split.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;

    let counts = label_counts(&samples, &split, taxonomy.len())?;
    let width = taxonomy.labels().iter().map(|l| l.chars().count()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>6} {:>6} {:>6}", "label", "train", "val", "test");
    for (name, c) in taxonomy.labels().iter().zip(&counts) {
        println!("{name:<width$}  {:>6} {:>6} {:>6}", c[0], c[1], c[2]);
    }
    println!(
        "{:<width$}  {:>6} {:>6} {:>6}",
        "samples",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}
