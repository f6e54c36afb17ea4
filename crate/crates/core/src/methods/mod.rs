//! Classification strategies over a frozen backbone.

mod artifact;
mod head;
mod neighbors;
mod nshot;
mod nte;
mod t2t;
mod train;
mod trained;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use artifact::{Artifact, ArtifactMeta, ARTIFACT_VERSION};
pub use head::{
    embed_samples, head_logits, predict_ptec, ptec_sample_loss, ptec_scores, train_ch, train_ptec,
    ClassificationHead, HeadTraining, PtecModel, HEAD_B, HEAD_W, SOFT_PROMPT,
};
pub use neighbors::{compressed_len, gzip_ncd, neighbor_decide, GzipIndex, NeighborIndex, GZIP_LEVEL};
pub use nshot::{nshot_predict, nshot_prompt};
pub use nte::{nte_loss, segment_nll_sum, LabelSegment};
pub use t2t::{
    decode_t2t, parse_generated, predict_pt_ts, soft_prompt_init, t2t_target, train_pt_t2t,
    ModelLogits, PromptTraining, T2tDecode, T2tTarget,
};
pub use train::{Checkpoint, EpochRecord};
pub use trained::{prompt_ids, Fitted, InstanceWeight, MethodConfig, Trained};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ptec,
    PtT2t,
    PtTs,
    Ch,
    Knn,
    #[serde(rename = "radiusnn")]
    RadiusNn,
    Gzip,
    #[serde(rename = "nshot")]
    NShot,
    #[serde(rename = "nshot-ts")]
    NShotTs,
}

/// The four properties compared across methods: predictions are always
/// taxonomy labels, outputs do not depend on a label order, per-label
/// confidence scores exist, and the language model side is tuned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub valid_labels: bool,
    pub order_invariant: bool,
    pub conf_scores: bool,
    pub llm_tuning: bool,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ptec,
        Method::PtT2t,
        Method::PtTs,
        Method::Ch,
        Method::Knn,
        Method::RadiusNn,
        Method::Gzip,
        Method::NShot,
        Method::NShotTs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ptec => "ptec",
            Method::PtT2t => "pt-t2t",
            Method::PtTs => "pt-ts",
            Method::Ch => "ch",
            Method::Knn => "knn",
            Method::RadiusNn => "radiusnn",
            Method::Gzip => "gzip",
            Method::NShot => "nshot",
            Method::NShotTs => "nshot-ts",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Ptec => "PTEC",
            Method::PtT2t => "PT + T2T",
            Method::PtTs => "PT + TS",
            Method::Ch => "CH",
            Method::Knn => "KNN",
            Method::RadiusNn => "RadiusNN",
            Method::Gzip => "gzip",
            Method::NShot => "N-shot",
            Method::NShotTs => "N-shot + TS",
        }
    }

    pub fn capabilities(self) -> Capabilities {
        let c = |valid_labels, order_invariant, conf_scores, llm_tuning| Capabilities {
            valid_labels,
            order_invariant,
            conf_scores,
            llm_tuning,
        };
        match self {
            Method::NShot => c(false, true, false, false),
            Method::NShotTs => c(true, true, false, false),
            Method::RadiusNn | Method::Knn | Method::Ch | Method::Gzip => c(true, true, true, false),
            Method::PtT2t => c(false, false, false, true),
            Method::PtTs => c(true, false, false, true),
            Method::Ptec => c(true, true, true, true),
        }
    }

    /// Whether predictions come with per-label scores and a threshold.
    pub fn has_scores(self) -> bool {
        self.capabilities().conf_scores
    }

    pub fn generates(self) -> bool {
        matches!(self, Method::PtT2t | Method::PtTs | Method::NShot | Method::NShotTs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.tag()).collect();
                crate::Error::Config(format!("unknown method `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

/// Label strings produced by a generative decode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLabels {
    pub strings: Vec<String>,
    /// Strings that are not taxonomy labels.
    pub invalid: usize,
    /// Strings repeating an earlier string of the same decode.
    pub duplicates: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub method: Method,
    /// Distinct taxonomy indices, ascending.
    pub labels: Vec<usize>,
    /// One score per taxonomy label for scoring methods.
    pub scores: Option<Vec<f64>>,
    pub generated: Option<GeneratedLabels>,
    /// Analytic inference cost; `None` when not estimable.
    pub flops: Option<u128>,
}

impl Prediction {
    pub(crate) fn from_labels(method: Method, mut labels: Vec<usize>, flops: Option<u128>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self {
            method,
            labels,
            scores: None,
            generated: None,
            flops,
        }
    }
}
