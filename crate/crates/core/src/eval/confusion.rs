use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold-dependent metrics. A ratio with a zero denominator is `None`
/// and its name is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let sensitivity = ratio(tp, tp + fn_);
        let ppv = ratio(tp, tp + fp);
        let f1 = match (ppv, sensitivity) {
            (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
            _ => None,
        };
        let mut m = Self {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            sensitivity,
            specificity: ratio(tn, tn + fp),
            ppv,
            npv: ratio(tn, tn + fn_),
            f1,
            undefined: Vec::new(),
        };
        for (name, v) in [
            ("accuracy", m.accuracy),
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("ppv", m.ppv),
            ("npv", m.npv),
            ("f1", m.f1),
        ] {
            if v.is_none() {
                m.undefined.push(name.to_string());
            }
        }
        m
    }
}

/// Confusion table at `score >= threshold => positive`.
pub fn confusion_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::UndefinedMetric(
            "scores and labels differ in length".into(),
        ));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionMetrics::from_counts(threshold, tp, fp, tn, fn_))
}
