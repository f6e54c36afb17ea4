//! Threshold selection on validation data and evaluation of a fitted method.

use serde::{Deserialize, Serialize};

use crate::backbone::LanguageModel;
use crate::data::{Sample, Subset};
use crate::error::{Error, Result};
use crate::methods::{Method, Prediction, Trained};
use crate::metrics::{
    label_set_report, roc_and_auroc, roc_point, select_threshold, FlopsLedger, MetricsReport, RocPoint,
    ThresholdChoice,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub roc: Vec<RocPoint>,
    pub flops: FlopsLedger,
    pub predictions: Vec<Prediction>,
}

pub fn flops_formula(method: Method) -> &'static str {
    match method {
        Method::Ptec => "encoder(m + n) + 2·d·l per sample",
        Method::Ch => "encoder(n) + 2·d·l per sample",
        Method::Knn | Method::RadiusNn => "E(T + I) + 3·D·T·I",
        Method::Gzip => "not estimable (compression, not floating point)",
        Method::PtT2t | Method::PtTs => "Σ over decode steps of encoder(m + n + t) + 2·d·V",
        Method::NShot | Method::NShotTs => "Σ over decode steps of encoder(context + t) + 2·d·V",
    }
}

fn gold_of(samples: &[&Sample]) -> Vec<Vec<usize>> {
    samples.iter().map(|s| s.labels.clone()).collect()
}

/// Picks and installs the decision threshold from validation samples only.
/// Returns `None` for methods without scores.
pub fn tune_threshold(trained: &mut Trained, model: &dyn LanguageModel, val: &[&Sample]) -> Result<Option<ThresholdChoice>> {
    if !trained.method().has_scores() {
        return Ok(None);
    }
    let preds = trained.predict_many(model, val)?;
    let scores: Vec<Vec<f64>> = preds
        .into_iter()
        .map(|p| p.scores.ok_or_else(|| Error::Data("scoring method returned no scores".into())))
        .collect::<Result<_>>()?;
    let choice = select_threshold(&scores, &gold_of(val))?;
    trained.set_tau(trained.clamp_tau(choice.tau))?;
    Ok(Some(ThresholdChoice {
        tau: trained.tau().expect("thresholded method"),
        macro_f1: choice.macro_f1,
    }))
}

/// Metrics, ROC points and inference FLOPs on `samples` at the installed
/// threshold.
pub fn evaluate(
    trained: &Trained,
    model: &dyn LanguageModel,
    samples: &[&Sample],
    subset: Subset,
    seed: u64,
) -> Result<Evaluation> {
    let method = trained.method();
    let predictions = trained.predict_many(model, samples)?;
    let gold = gold_of(samples);
    let pred: Vec<Vec<usize>> = predictions.iter().map(|p| p.labels.clone()).collect();
    let subset_name = match subset {
        Subset::Train => "train",
        Subset::Val => "val",
        Subset::Test => "test",
    };
    let mut report = label_set_report(method.tag(), subset_name, seed, &pred, &gold, trained.taxonomy().labels())?;
    report.tau = trained.tau();

    let roc = if method.has_scores() {
        let scores: Vec<Vec<f64>> = predictions.iter().map(|p| p.scores.clone().expect("scores")).collect();
        match roc_and_auroc(&scores, &gold) {
            Ok(r) => {
                report.auroc = Some(r.auroc);
                r.points
            }
            Err(Error::Undefined(msg)) => {
                log::warn!("AUROC undefined: {msg}");
                Vec::new()
            }
            Err(e) => return Err(e),
        }
    } else {
        vec![roc_point(&pred, &gold, trained.taxonomy().len())?]
    };

    if method.generates() {
        let (mut strings, mut invalid, mut dups) = (0usize, 0usize, 0usize);
        for g in predictions.iter().filter_map(|p| p.generated.as_ref()) {
            strings += g.strings.len();
            invalid += g.invalid;
            dups += g.duplicates;
        }
        if strings > 0 {
            report.validity_rate = Some((strings - invalid) as f64 / strings as f64);
            report.duplicate_rate = Some(dups as f64 / strings as f64);
        }
    }

    let mut flops = FlopsLedger::new(method.tag(), flops_formula(method));
    flops.training = None;
    for p in &predictions {
        flops.add_inference(p.flops);
    }
    Ok(Evaluation {
        report,
        roc,
        flops,
        predictions,
    })
}
