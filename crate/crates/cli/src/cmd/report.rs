use std::path::PathBuf;

use anyhow::{Context, Result};

use ptec_core::metrics::flops::DEFAULT_EXTRAPOLATION;
use ptec_core::Method;

use crate::cmd::eval::Set;
use crate::cmd::flops::{run_ledger, sci};

#[derive(clap::Args)]
pub struct Args {
    /// Run directories; methods without one are shown with dashes.
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    set: Set,
    #[arg(long, default_value_t = DEFAULT_EXTRAPOLATION)]
    extrapolate: u128,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

struct Row {
    method: Method,
    training: Option<u128>,
    inference: Option<u128>,
    f1_mean: Option<f64>,
    f1_std: Option<f64>,
    seeds: usize,
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn run(a: Args) -> Result<()> {
    let mut rows: Vec<Row> = Method::ALL
        .iter()
        .map(|&method| Row {
            method,
            training: None,
            inference: None,
            f1_mean: None,
            f1_std: None,
            seeds: 0,
        })
        .collect();
    for run in &a.runs {
        let (manifest, eval, ledger) =
            run_ledger(run, a.set, a.extrapolate).with_context(|| format!("reading run {}", run.display()))?;
        let row = rows.iter_mut().find(|r| r.method == manifest.method).expect("every method has a row");
        if row.seeds > 0 || row.training.is_some() {
            log::warn!("several runs for {}; keeping {}", manifest.method, run.display());
        }
        row.training = ledger.training;
        row.inference = eval.as_ref().and(ledger.inference_extrapolated);
        row.f1_mean = eval.as_ref().and_then(|e| e.macro_f1_mean);
        row.f1_std = eval.as_ref().and_then(|e| e.macro_f1_std);
        row.seeds = eval.as_ref().map_or(0, |e| e.seeds.len());
    }
    // Highest macro F1 first; methods without results last in table order.
    rows.sort_by(|x, y| match (x.f1_mean, y.f1_mean) {
        (Some(a), Some(b)) => b.total_cmp(&a),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<12} {:>11} {:>11} {:>8} {:>8} {:>5}  {:<6} {:<6} {:<6} {:<6}",
        "Method", "Train", "Inference", "F1 mean", "F1 std", "seeds", "valid", "order", "scores", "tuning"
    );
    for r in &rows {
        let c = r.method.capabilities();
        println!(
            "{:<12} {:>11} {:>11} {:>8} {:>8} {:>5}  {:<6} {:<6} {:<6} {:<6}",
            r.method.display_name(),
            sci(r.training),
            sci(r.inference),
            f(r.f1_mean),
            f(r.f1_std),
            if r.seeds == 0 { "-".to_string() } else { r.seeds.to_string() },
            mark(c.valid_labels),
            mark(c.order_invariant),
            mark(c.conf_scores),
            mark(c.llm_tuning)
        );
    }
    println!("Inference FLOPs extrapolated to {} samples; - marks unavailable data.", a.extrapolate);

    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record([
            "method",
            "training_flops",
            "inference_flops",
            "macro_f1_mean",
            "macro_f1_std",
            "seeds",
            "valid_labels",
            "order_invariant",
            "conf_scores",
            "llm_tuning",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &rows {
            let c = r.method.capabilities();
            w.write_record([
                r.method.display_name().to_string(),
                opt(r.training.map(|v| v.to_string())),
                opt(r.inference.map(|v| v.to_string())),
                opt(r.f1_mean.map(|v| v.to_string())),
                opt(r.f1_std.map(|v| v.to_string())),
                r.seeds.to_string(),
                c.valid_labels.to_string(),
                c.order_invariant.to_string(),
                c.conf_scores.to_string(),
                c.llm_tuning.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
