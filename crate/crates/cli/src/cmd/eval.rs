use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ptec_core::data::Subset;
use ptec_core::eval::{evaluate, tune_threshold};
use ptec_core::methods::{Artifact, Trained};
use ptec_core::metrics::{roc_csv, FlopsLedger, MetricsReport};
use ptec_core::Method;

use crate::args::usage;
use crate::run::{read_json, seed_dir, write_json, Manifest, ARTIFACT, TRAIN_SUMMARY};
use crate::cmd::train::TrainSummary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Set {
    Val,
    Test,
}

impl Set {
    fn subset(self) -> Subset {
        match self {
            Set::Val => Subset::Val,
            Set::Test => Subset::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Set::Val => "val",
            Set::Test => "test",
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    set: Set,
    /// Evaluate only the first N seeds of the run.
    #[arg(long)]
    seeds: Option<usize>,
    /// Subset the threshold is selected on. Only `val` is accepted.
    #[arg(long, value_enum, default_value = "val")]
    tau_from: Set,
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: Method,
    pub set: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    pub macro_f1_mean: Option<f64>,
    pub macro_f1_std: Option<f64>,
    pub micro_f1_mean: Option<f64>,
    pub auroc_mean: Option<f64>,
    pub validity_rate_mean: Option<f64>,
    pub duplicate_rate_mean: Option<f64>,
    /// Mean over seeds of the training cost.
    pub training_flops: Option<u128>,
    pub inference: FlopsLedger,
}

pub fn file_name(set: Set) -> String {
    format!("eval-{}.json", set.name())
}

pub fn run(a: Args) -> Result<()> {
    if a.tau_from == Set::Test {
        return Err(usage("refusing to select the threshold on test data; use --tau-from val"));
    }
    let summary = evaluate_run(&a.run, a.set, a.seeds)?;
    write_json(&a.run.join(file_name(a.set)), &summary)?;

    println!("{} on {} ({} seeds)", summary.method.display_name(), summary.set, summary.seeds.len());
    println!("{:>6} {:>9} {:>9} {:>8} {:>8}", "seed", "macro-F1", "micro-F1", "AUROC", "tau");
    let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    for r in &summary.reports {
        println!(
            "{:>6} {:>9.4} {:>9.4} {:>8} {:>8}",
            r.seed,
            r.macro_f1,
            r.micro_f1,
            opt(r.auroc, 4),
            opt(r.tau, 4)
        );
    }
    println!("mean macro-F1 {}  std {}", opt(summary.macro_f1_mean, 4), opt(summary.macro_f1_std, 4));
    if let Some(v) = summary.validity_rate_mean {
        println!("validity {:.4}  duplicates {:.4}", v, summary.duplicate_rate_mean.unwrap_or(0.0));
    }
    Ok(())
}

pub fn evaluate_run(run: &Path, set: Set, limit: Option<usize>) -> Result<EvalSummary> {
    let manifest = Manifest::load(run)?;
    let inputs = manifest.inputs()?;
    let model = inputs.model();
    let val = inputs.subset(Subset::Val)?;
    let samples = inputs.subset(set.subset())?;
    let seeds: Vec<u64> = manifest.seeds.iter().copied().take(limit.unwrap_or(usize::MAX)).collect();

    let mut reports = Vec::new();
    let mut training = Some(0u128);
    let mut inference = FlopsLedger::new(manifest.method.tag(), ptec_core::eval::flops_formula(manifest.method));
    inference.training = None;
    for &seed in &seeds {
        let dir = seed_dir(run, seed);
        let artifact = Artifact::load(&dir.join(ARTIFACT)).with_context(|| format!("seed {seed}: not trained"))?;
        let mut trained = Trained::from_artifact(&artifact, &inputs.taxonomy, model)?;
        // The threshold is chosen from validation samples alone.
        tune_threshold(&mut trained, model, &val)?;
        let ev = evaluate(&trained, model, &samples, set.subset(), seed)?;
        fs::write(dir.join(format!("roc-{}.csv", set.name())), roc_csv(&ev.roc))?;
        write_json(&dir.join(file_name(set)), &ev.report)?;
        inference.merge_inference(&ev.flops);
        let s: TrainSummary = read_json(&dir.join(TRAIN_SUMMARY))?;
        training = training.zip(s.training_flops).map(|(a, b)| a + b);
        reports.push(ev.report);
    }
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
    let mean_of = |xs: Vec<Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = xs.into_iter().collect();
        v.and_then(|v| mean_std(&v).0)
    };
    Ok(EvalSummary {
        method: manifest.method,
        set: set.name().into(),
        seeds: seeds.clone(),
        micro_f1_mean: mean_std(&reports.iter().map(|r| r.micro_f1).collect::<Vec<_>>()).0,
        auroc_mean: mean_of(reports.iter().map(|r| r.auroc).collect()),
        validity_rate_mean: mean_of(reports.iter().map(|r| r.validity_rate).collect()),
        duplicate_rate_mean: mean_of(reports.iter().map(|r| r.duplicate_rate).collect()),
        macro_f1_mean,
        macro_f1_std,
        reports,
        training_flops: training.map(|t| t / seeds.len().max(1) as u128),
        inference,
    })
}
