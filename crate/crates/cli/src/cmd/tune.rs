use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::{Map, Value};

use ptec_core::data::Subset;
use ptec_core::eval::{evaluate, tune_threshold};
use ptec_core::methods::Trained;
use ptec_core::tuning::{default_space, run_search, Config, Kind, SearchConfig, SearchSpace};
use ptec_core::MethodConfig;

use crate::args::{format_real, usage};
use crate::run::{read_json, write_json, Inputs, RunArgs};

pub const HISTORY: &str = "history.jsonl";
pub const BEST: &str = "best.json";

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    run: RunArgs,
    /// JSON search space `{"params": [...]}`; defaults to the method's standard ranges.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Directory for the trial history and the best config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    n_random: usize,
    #[arg(long, default_value_t = 15)]
    n_bo: usize,
    #[arg(long, default_value_t = 1024)]
    candidates: usize,
}

/// Applies a trial's values to the base configuration.
fn apply(base: &MethodConfig, space: &SearchSpace, trial: &Config) -> ptec_core::Result<MethodConfig> {
    let mut map = match serde_json::to_value(base).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    for p in &space.params {
        let v = trial[&p.name];
        let json = match p.kind {
            Kind::Integer if v >= 0.0 => Value::from(v as u64),
            Kind::Integer => Value::from(v as i64),
            Kind::Real => serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null),
        };
        map.insert(p.name.clone(), json);
    }
    let cfg: MethodConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| ptec_core::Error::Config(format!("search space does not fit the method config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn flag_name(field: &str) -> String {
    match field {
        "weight_decay" => "wd".into(),
        f => f.replace('_', "-"),
    }
}

pub fn run(a: Args) -> Result<()> {
    let r = a.run.resolve(&[])?;
    let space: SearchSpace = match &a.space {
        Some(p) => read_json(p)?,
        None => default_space(r.method).map_err(|e| usage(e.to_string()))?,
    };
    space.validate().map_err(|e| usage(e.to_string()))?;
    // Every name must map onto a config field before any training starts.
    let probe: Config = space.params.iter().map(|p| (p.name.clone(), p.low)).collect();
    apply(&r.config, &space, &probe).map_err(|e| usage(e.to_string()))?;

    let inputs = Inputs::load(&r.dataset, &r.taxonomy, &r.split, &r.backbone, r.backbone_file.as_deref())?;
    let model = inputs.model();
    let train = inputs.subset(Subset::Train)?;
    let val = inputs.subset(Subset::Val)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let method = r.method;
    let mut objective = |trial: &Config, seed: u64| -> ptec_core::Result<f64> {
        let cfg = MethodConfig {
            seed,
            ..apply(&r.config, &space, trial)?
        };
        let mut trained = Trained::fit(method, model, &inputs.taxonomy, &train, &cfg, None, &mut |_| Ok(()))?.trained;
        let score = match tune_threshold(&mut trained, model, &val)? {
            Some(choice) => choice.macro_f1,
            None => evaluate(&trained, model, &val, Subset::Val, seed)?.report.macro_f1,
        };
        eprintln!("trial {trial:?}: val macro F1 {score:.4}");
        Ok(score)
    };
    let search = SearchConfig {
        n_random: a.n_random,
        n_bo: a.n_bo,
        candidates: a.candidates,
        seed: r.config.seed,
    };
    let result = run_search(&mut objective, &space, &search, Some(&a.out.join(HISTORY)))?;

    let best_cfg = apply(&r.config, &space, &result.best.config)?;
    let mut best = Map::new();
    best.insert("method".into(), Value::String(method.tag().into()));
    best.insert("objective".into(), result.best.objective.into());
    best.insert("trial".into(), result.best.index.into());
    best.insert("config".into(), serde_json::to_value(&best_cfg)?);
    best.insert("near_boundary".into(), serde_json::to_value(&result.near_boundary)?);
    write_json(&a.out.join(BEST), &Value::Object(best))?;

    let flags: Vec<String> = space
        .params
        .iter()
        .map(|p| {
            let v = result.best.config[&p.name];
            let shown = match p.kind {
                Kind::Integer => format!("{}", v as i64),
                Kind::Real => format_real(v),
            };
            format!("--{} {shown}", flag_name(&p.name))
        })
        .collect();
    println!(
        "best val macro F1 {:.4} (trial {})",
        result.best.objective.unwrap_or(f64::NAN),
        result.best.index
    );
    println!("--method {} {}", method.tag(), flags.join(" "));
    for name in &result.near_boundary {
        eprintln!("warning: `{name}` ended near its search bound; consider widening the range");
    }
    Ok(())
}
