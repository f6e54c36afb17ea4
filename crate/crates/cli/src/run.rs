//! Run configuration, input loading and the run-directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use ptec_core::data::{load_dataset, Sample, Split, Subset, Taxonomy};
use ptec_core::seed::sha256_hex;
use ptec_core::{Backbone, BackboneConfig, LanguageModel, Method, MethodConfig};

use crate::args::{normalize_reals, usage, HyperArgs};

pub const MANIFEST: &str = "manifest.json";
pub const ARTIFACT: &str = "artifact.bin";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let path = fs::canonicalize(path)?;
        Ok(Self {
            path,
            sha256: sha256_hex(&bytes),
        })
    }

    /// Fails when the file changed since the run was configured.
    pub fn verify(&self) -> Result<()> {
        let now = FileRef::of(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(ptec_core::Error::Checksum {
                expected: self.sha256.clone(),
                found: now.sha256,
            })
            .with_context(|| format!("{} changed since the run was created", self.path.display()));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub config: MethodConfig,
    pub seeds: Vec<u64>,
    pub backbone: BackboneConfig,
    pub backbone_file: Option<FileRef>,
    pub backbone_checksum: String,
    pub dataset: FileRef,
    pub taxonomy: FileRef,
    pub split: FileRef,
}

impl Manifest {
    pub fn load(run: &Path) -> Result<Self> {
        let path = run.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }

    pub fn config_for(&self, seed: u64) -> MethodConfig {
        MethodConfig {
            seed,
            ..self.config.clone()
        }
    }

    /// Reloads and checks every input file.
    pub fn inputs(&self) -> Result<Inputs> {
        for f in [&self.dataset, &self.taxonomy, &self.split] {
            f.verify()?;
        }
        if let Some(f) = &self.backbone_file {
            f.verify()?;
        }
        let inputs = Inputs::load(
            &self.dataset.path,
            &self.taxonomy.path,
            &self.split.path,
            &self.backbone,
            self.backbone_file.as_ref().map(|f| f.path.as_path()),
        )?;
        let found = inputs.model.checksum();
        if found != self.backbone_checksum {
            return Err(ptec_core::Error::Mismatch {
                what: "backbone",
                expected: self.backbone_checksum.clone(),
                found,
            }
            .into());
        }
        Ok(inputs)
    }
}

pub struct Inputs {
    pub taxonomy: Taxonomy,
    pub samples: Vec<Sample>,
    pub split: Split,
    pub model: Backbone,
}

impl Inputs {
    pub fn load(
        dataset: &Path,
        taxonomy: &Path,
        split: &Path,
        backbone: &BackboneConfig,
        backbone_file: Option<&Path>,
    ) -> Result<Self> {
        let (taxonomy, samples) =
            load_dataset(dataset, taxonomy).with_context(|| format!("loading {}", dataset.display()))?;
        let split = Split::load(split).with_context(|| format!("loading {}", split.display()))?;
        let model = match backbone_file {
            Some(p) => Backbone::load(p).with_context(|| format!("loading backbone {}", p.display()))?,
            None => Backbone::init(backbone.clone())?,
        };
        Ok(Self {
            taxonomy,
            samples,
            split,
            model,
        })
    }

    pub fn subset(&self, s: Subset) -> Result<Vec<&Sample>> {
        Ok(self.split.select(&self.samples, s)?)
    }

    pub fn model(&self) -> &dyn LanguageModel {
        &self.model
    }
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

/// Run-level flags shared by `train` and `tune`. A JSON config file may set
/// any of them plus every hyperparameter; flags win over the file.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// JSON file mirroring the command-line flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Saved backbone weights; without it the toy backbone is built from its config.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

pub struct Resolved {
    pub method: Method,
    pub dataset: PathBuf,
    pub taxonomy: PathBuf,
    pub split: PathBuf,
    pub backbone: BackboneConfig,
    pub backbone_file: Option<PathBuf>,
    pub config: MethodConfig,
    /// Keys the file set at run level that the caller may still need.
    pub extra: Map<String, Value>,
}

impl RunArgs {
    /// Merges defaults, the config file and flags. `extra_keys` are run-level
    /// keys a particular command accepts in the file (for example `out`).
    pub fn resolve(&self, extra_keys: &[&str]) -> Result<Resolved> {
        let mut file = match &self.config {
            Some(p) => match read_json::<Value>(p)? {
                Value::Object(m) => m,
                _ => return Err(usage(format!("{} must hold a JSON object", p.display()))),
            },
            None => Map::new(),
        };
        let take_str = |file: &mut Map<String, Value>, k: &str| -> Result<Option<String>> {
            match file.remove(k) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(_) => Err(usage(format!("config key `{k}` must be a string"))),
            }
        };
        let method = self.method.clone().or(take_str(&mut file, "method")?);
        let dataset = self.dataset.clone().or(take_str(&mut file, "dataset")?.map(PathBuf::from));
        let taxonomy = self.taxonomy.clone().or(take_str(&mut file, "taxonomy")?.map(PathBuf::from));
        let split = self.split.clone().or(take_str(&mut file, "split")?.map(PathBuf::from));
        let backbone_file = self.backbone.clone().or(take_str(&mut file, "backbone_file")?.map(PathBuf::from));
        let backbone: BackboneConfig = match file.remove("backbone") {
            Some(v) => serde_json::from_value(v).map_err(|e| usage(format!("config `backbone`: {e}")))?,
            None => BackboneConfig::default(),
        };
        let mut extra = Map::new();
        for k in extra_keys {
            if let Some(v) = file.remove(*k) {
                extra.insert((*k).into(), v);
            }
        }

        let mut merged = match serde_json::to_value(MethodConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("struct serializes to an object"),
        };
        normalize_reals(&mut file);
        merged.extend(file);
        merged.extend(self.hyper.overrides());
        if let Some(s) = self.seed {
            merged.insert("seed".into(), Value::from(s));
        }
        let config: MethodConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid configuration: {e}")))?;
        config.validate().map_err(|e| usage(e.to_string()))?;

        let need = |v: Option<PathBuf>, name: &str| v.ok_or_else(|| usage(format!("--{name} is required")));
        let method: Method = method
            .ok_or_else(|| usage("--method is required"))?
            .parse()
            .map_err(|e: ptec_core::Error| usage(e.to_string()))?;
        backbone.validate().map_err(|e| usage(e.to_string()))?;
        Ok(Resolved {
            method,
            dataset: need(dataset, "dataset")?,
            taxonomy: need(taxonomy, "taxonomy")?,
            split: need(split, "split")?,
            backbone,
            backbone_file,
            config,
            extra,
        })
    }
}
