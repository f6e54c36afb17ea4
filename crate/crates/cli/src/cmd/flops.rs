use std::path::{Path, PathBuf};

use anyhow::Result;

use ptec_core::metrics::FlopsLedger;
use ptec_core::{eval::flops_formula, metrics::flops::DEFAULT_EXTRAPOLATION};

use crate::cmd::eval::{file_name, EvalSummary, Set};
use crate::cmd::train::TrainSummary;
use crate::run::{read_json, seed_dir, Manifest, TRAIN_SUMMARY};

#[derive(clap::Args)]
pub struct Args {
    /// Run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Evaluation whose inference counts are reported.
    #[arg(long, value_enum, default_value = "test")]
    set: Set,
    #[arg(long, default_value_t = DEFAULT_EXTRAPOLATION)]
    extrapolate: u128,
    /// Print the ledgers as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

/// A run's training cost (mean over its trained seeds) merged with the
/// inference counts of its evaluation, when one exists.
pub fn run_ledger(run: &Path, set: Set, extrapolate: u128) -> Result<(Manifest, Option<EvalSummary>, FlopsLedger)> {
    let manifest = Manifest::load(run)?;
    let summaries: Vec<TrainSummary> = manifest
        .seeds
        .iter()
        .map(|&s| seed_dir(run, s).join(TRAIN_SUMMARY))
        .filter(|p| p.exists())
        .map(|p| read_json(&p))
        .collect::<Result<_>>()?;
    let eval_path = run.join(file_name(set));
    let eval: Option<EvalSummary> = eval_path.exists().then(|| read_json(&eval_path)).transpose()?;

    let mut ledger = match &eval {
        Some(e) => e.inference.clone(),
        None => FlopsLedger::new(manifest.method.tag(), flops_formula(manifest.method)),
    };
    ledger.training = if summaries.is_empty() {
        None
    } else {
        let total: Option<u128> = summaries.iter().map(|s| s.training_flops).sum();
        total.map(|t| t / summaries.len() as u128)
    };
    ledger.training_samples = summaries.first().map_or(0, |s| s.training_samples as u64);
    ledger.set_extrapolation(extrapolate);
    Ok((manifest, eval, ledger))
}

pub fn sci(v: Option<u128>) -> String {
    v.map_or("-".into(), |x| format!("{:.3e}", x as f64))
}

pub fn run(a: Args) -> Result<()> {
    let mut ledgers = Vec::new();
    for run in &a.runs {
        ledgers.push(run_ledger(run, a.set, a.extrapolate)?.2);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ledgers)?);
        return Ok(());
    }
    println!(
        "{:<10} {:>12} {:>14} {:>16}  formula",
        "method",
        "training",
        "infer/sample",
        format!("infer x {}", a.extrapolate)
    );
    for l in &ledgers {
        println!(
            "{:<10} {:>12} {:>14} {:>16}  {}",
            l.method,
            sci(l.training),
            sci(l.inference_per_sample),
            sci(l.inference_extrapolated),
            l.formula
        );
    }
    Ok(())
}
