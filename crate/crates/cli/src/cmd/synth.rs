use std::fs;
use std::path::PathBuf;

use anyhow::Result;

use ptec_core::data::{synth_generate, to_jsonl, SynthConfig};

#[derive(clap::Args)]
pub struct Args {
    /// Directory receiving dataset.jsonl and taxonomy.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    labels: usize,
    #[arg(long, default_value_t = 60)]
    samples_per_label: usize,
    #[arg(long, default_value_t = 12)]
    vocab_per_label: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    multi_label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(a: Args) -> Result<()> {
    let cfg = SynthConfig {
        labels: a.labels,
        samples_per_label: a.samples_per_label,
        vocab_per_label: a.vocab_per_label,
        noise: a.noise,
        multi_label_fraction: a.multi_label_fraction,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let (taxonomy, samples) = synth_generate(&cfg)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("dataset.jsonl"), to_jsonl(&samples, &taxonomy)?)?;
    fs::write(a.out.join("taxonomy.txt"), taxonomy.to_file_string())?;
    println!("wrote {} samples over {} labels to {}", samples.len(), taxonomy.len(), a.out.display());
    Ok(())
}
