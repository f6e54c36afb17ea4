use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ptec_core::data::Subset;
use ptec_core::eval::tune_threshold;
use ptec_core::methods::{Checkpoint, Trained};
use ptec_core::{LanguageModel, Method};

use crate::args::usage;
use crate::run::{
    read_json, seed_dir, write_json, FileRef, Inputs, Manifest, RunArgs, ARTIFACT, CHECKPOINT, LOSS_CSV, MANIFEST,
    TRAIN_SUMMARY,
};

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    run: RunArgs,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// Continue from the last finished epoch of an earlier run.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub seed: u64,
    pub epochs_done: usize,
    pub final_loss: Option<f64>,
    pub training_flops: Option<u128>,
    pub training_samples: usize,
    pub tau: Option<f64>,
    /// Validation macro F1 at the selected threshold.
    pub val_macro_f1: Option<f64>,
}

fn loss_csv(c: &Checkpoint) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for r in &c.history {
        for (i, l) in r.step_losses.iter().enumerate() {
            let _ = writeln!(out, "{},{i},{l}", r.epoch);
        }
    }
    out
}

pub fn run(a: Args) -> Result<()> {
    let r = a.run.resolve(&["out", "seeds"])?;
    let out = match (&a.out, r.extra.get("out")) {
        (Some(p), _) => p.clone(),
        (None, Some(serde_json::Value::String(s))) => PathBuf::from(s),
        _ => return Err(usage("--out is required")),
    };
    let n_seeds = match (a.seeds, r.extra.get("seeds")) {
        (Some(n), _) => n,
        (None, Some(v)) => v.as_u64().ok_or_else(|| usage("config key `seeds` must be a count"))?,
        _ => 1,
    };
    if n_seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let inputs = Inputs::load(&r.dataset, &r.taxonomy, &r.split, &r.backbone, r.backbone_file.as_deref())?;
    let base = r.config.seed;
    let manifest = Manifest {
        method: r.method,
        config: r.config.clone(),
        seeds: (base..base + n_seeds).collect(),
        backbone: inputs.model.config().clone(),
        backbone_file: r.backbone_file.as_deref().map(FileRef::of).transpose()?,
        backbone_checksum: inputs.model.checksum(),
        dataset: FileRef::of(&r.dataset)?,
        taxonomy: FileRef::of(&r.taxonomy)?,
        split: FileRef::of(&r.split)?,
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join(MANIFEST);
    if manifest_path.exists() {
        let old = Manifest::load(&out)?;
        if old != manifest {
            return Err(usage(format!(
                "{} holds a run with a different configuration; choose another --out",
                out.display()
            )));
        }
    } else if a.resume {
        return Err(usage(format!("nothing to resume in {}", out.display())));
    }
    write_json(&manifest_path, &manifest)?;

    let train = inputs.subset(Subset::Train)?;
    let val = inputs.subset(Subset::Val)?;
    for &seed in &manifest.seeds {
        train_seed(&out, &manifest, &inputs, &train, &val, seed, a.resume)?;
    }
    Ok(())
}

fn train_seed(
    out: &Path,
    manifest: &Manifest,
    inputs: &Inputs,
    train: &[&ptec_core::Sample],
    val: &[&ptec_core::Sample],
    seed: u64,
    resume: bool,
) -> Result<()> {
    let dir = seed_dir(out, seed);
    fs::create_dir_all(&dir)?;
    let (ckpt_path, summary_path) = (dir.join(CHECKPOINT), dir.join(TRAIN_SUMMARY));
    if resume && summary_path.exists() && dir.join(ARTIFACT).exists() {
        log::info!("seed {seed}: already trained");
        return Ok(());
    }
    let checkpoint: Option<Checkpoint> = if resume && ckpt_path.exists() {
        let c: Checkpoint = read_json(&ckpt_path)?;
        log::info!("seed {seed}: resuming after epoch {}", c.epochs_done);
        Some(c)
    } else {
        None
    };

    let cfg = manifest.config_for(seed);
    let t0 = Instant::now();
    let model = inputs.model();
    let mut on_epoch = |c: &Checkpoint| -> ptec_core::Result<()> {
        let io = |e: anyhow::Error| ptec_core::Error::Io(std::io::Error::other(format!("{e:#}")));
        write_json(&ckpt_path, c).map_err(io)?;
        fs::write(dir.join(LOSS_CSV), loss_csv(c))?;
        Ok(())
    };
    let fitted = Trained::fit(manifest.method, model, &inputs.taxonomy, train, &cfg, checkpoint, &mut on_epoch)?;
    let mut trained = fitted.trained;
    let choice = tune_threshold(&mut trained, model, val)?;
    trained.to_artifact(model).save(&dir.join(ARTIFACT))?;

    let summary = TrainSummary {
        method: manifest.method,
        seed,
        epochs_done: fitted.checkpoint.as_ref().map_or(0, |c| c.epochs_done),
        final_loss: fitted.checkpoint.as_ref().and_then(|c| c.history.last()).map(|r| r.mean_loss()),
        training_flops: fitted.flops,
        training_samples: train.len(),
        tau: trained.tau(),
        val_macro_f1: choice.map(|c| c.macro_f1),
    };
    write_json(&summary_path, &summary)?;
    eprintln!(
        "seed {seed}: {} trained in {:.1}s{}",
        manifest.method,
        t0.elapsed().as_secs_f64(),
        summary
            .val_macro_f1
            .map(|f| format!(", val macro F1 {f:.4} at tau {:.4}", summary.tau.unwrap_or(f64::NAN)))
            .unwrap_or_default()
    );
    Ok(())
}
