//! Trained-method files: JSON metadata plus raw parameter tensors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trained::MethodConfig;
use super::Method;
use crate::backbone::LanguageModel;
use crate::container;
use crate::data::{SampleRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::Tensor;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub version: u32,
    pub method: Method,
    pub config: MethodConfig,
    pub taxonomy_checksum: String,
    pub backbone_checksum: String,
    /// Selected decision threshold for scoring methods.
    pub tau: Option<f64>,
    /// Label sets of indexed neighbors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_labels: Option<Vec<Vec<usize>>>,
    /// Raw texts of the gzip index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_texts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gzip_level: Option<u32>,
    /// Example pool of in-context methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<SampleRecord>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub meta: ArtifactMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Artifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, &self.meta, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = container::read(path)?;
        let meta: ArtifactMeta = serde_json::from_value(serde_json::Value::Object(meta))?;
        if meta.version != ARTIFACT_VERSION {
            return Err(Error::Format(format!("unsupported artifact version {}", meta.version)));
        }
        Ok(Self { meta, tensors })
    }

    /// Refuses use with a taxonomy or backbone other than the training ones.
    pub fn verify(&self, taxonomy: &Taxonomy, model: &dyn LanguageModel) -> Result<()> {
        let tax = taxonomy.checksum();
        if tax != self.meta.taxonomy_checksum {
            return Err(Error::Mismatch {
                what: "taxonomy",
                expected: self.meta.taxonomy_checksum.clone(),
                found: tax,
            });
        }
        let bb = model.checksum();
        if bb != self.meta.backbone_checksum {
            return Err(Error::Mismatch {
                what: "backbone",
                expected: self.meta.backbone_checksum.clone(),
                found: bb,
            });
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("artifact lacks tensor `{name}`")))
    }
}
