use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use ptec_core::data::SampleRecord;
use ptec_core::eval::flops_formula;
use ptec_core::methods::{Artifact, Trained};
use ptec_core::metrics::FlopsLedger;
use ptec_core::{LanguageModel, Prediction, Sample};

use crate::run::{seed_dir, Manifest, ARTIFACT};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    run: PathBuf,
    /// Seed of the run to use; defaults to its first.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON Lines input, `-` for stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// JSON Lines output, `-` for stdout.
    #[arg(long, default_value = "-")]
    output: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Sample count the inference cost is extrapolated to.
    #[arg(long, default_value_t = ptec_core::metrics::flops::DEFAULT_EXTRAPOLATION)]
    extrapolate: u128,
}

/// Malformed input lines were skipped.
#[derive(Debug)]
struct SkippedLines(usize);

impl std::fmt::Display for SkippedLines {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} malformed input lines skipped", self.0)
    }
}

impl std::error::Error for SkippedLines {}

fn predict_batch(trained: &Trained, model: &dyn LanguageModel, batch: &[Sample], workers: usize) -> Vec<ptec_core::Result<Prediction>> {
    if workers <= 1 || batch.len() <= 1 {
        return batch.iter().map(|s| trained.predict(model, s)).collect();
    }
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| trained.predict(model, s)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub fn run(a: Args) -> Result<()> {
    let manifest = Manifest::load(&a.run)?;
    let inputs = manifest.inputs()?;
    let model = inputs.model();
    let seed = a.seed.or(manifest.seeds.first().copied()).context("run has no seeds")?;
    let artifact = Artifact::load(&seed_dir(&a.run, seed).join(ARTIFACT))?;
    let trained = Trained::from_artifact(&artifact, &inputs.taxonomy, model)?;
    let names = inputs.taxonomy.labels();

    let reader: Box<dyn BufRead> = if a.input == "-" {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        Box::new(BufReader::new(File::open(&a.input).with_context(|| format!("opening {}", a.input))?))
    };
    let mut writer: Box<dyn Write> = if a.output == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(File::create(&a.output).with_context(|| format!("creating {}", a.output))?))
    };

    let workers = a.workers.max(1);
    let batch_size = workers * 8;
    let mut ledger = FlopsLedger::new(trained.method().tag(), flops_formula(trained.method()));
    ledger.training = None;
    let mut skipped = 0usize;
    let mut batch: Vec<Sample> = Vec::with_capacity(batch_size);
    let mut lines = reader.lines().enumerate();
    loop {
        let next = lines.next();
        if let Some((i, line)) = &next {
            let line = match line {
                Ok(l) => l,
                Err(e) => return Err(anyhow::anyhow!("reading input line {}: {e}", i + 1)),
            };
            if !line.trim().is_empty() {
                match serde_json::from_str::<SampleRecord>(line) {
                    Ok(r) => batch.push(r.into_unlabeled()),
                    Err(e) => {
                        eprintln!("warning: input line {}: {e}; skipped", i + 1);
                        skipped += 1;
                    }
                }
            }
        }
        if batch.len() >= batch_size || (next.is_none() && !batch.is_empty()) {
            for (s, p) in batch.iter().zip(predict_batch(&trained, model, &batch, workers)) {
                let p = p?;
                ledger.add_inference(p.flops);
                let mut obj = Map::new();
                obj.insert("id".into(), json!(s.id));
                obj.insert("labels".into(), json!(p.labels.iter().map(|&l| &names[l]).collect::<Vec<_>>()));
                if let Some(sc) = &p.scores {
                    let m: Map<String, Value> = names.iter().cloned().zip(sc.iter().map(|v| json!(v))).collect();
                    obj.insert("scores".into(), Value::Object(m));
                }
                serde_json::to_writer(&mut writer, &Value::Object(obj))?;
                writer.write_all(b"\n")?;
            }
            batch.clear();
        }
        if next.is_none() {
            break;
        }
    }
    writer.flush()?;

    ledger.set_extrapolation(a.extrapolate);
    let show = |v: Option<u128>| v.map_or("-".to_string(), |x| format!("{x:.3e}", x = x as f64));
    eprintln!(
        "{} samples; inference FLOPs per sample {}, total {}, extrapolated to {} samples {}",
        ledger.inference_samples,
        show(ledger.inference_per_sample),
        show(ledger.inference_total),
        a.extrapolate,
        show(ledger.inference_extrapolated)
    );
    if skipped > 0 {
        return Err(SkippedLines(skipped).into());
    }
    Ok(())
}
