//! ROC curves and the rank-sum AUROC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::UndefinedMetric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC: `(concordant + 0.5 * tied) / (P * N)`, computed from
/// the positive rank sum with average ranks for tied scores.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending thresholds; the first point uses `+inf` (nothing positive).
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
    pub auroc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

/// One point per distinct score, each predicting positive for `score >= threshold`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        tp: 0,
        fp: 0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            tp,
            fp,
        });
    }
    Ok(RocCurve {
        points,
        positives: pos,
        negatives: neg,
        auroc: auroc(scores, labels)?,
    })
}

/// Smallest true-positive count `k` with `k / positives >= target`.
pub fn required_true_positives(positives: usize, target: f64) -> usize {
    let mut k = ((target * positives as f64).floor() as usize).saturating_sub(1);
    while (k as f64) / (positives as f64) < target {
        k += 1;
    }
    k.min(positives)
}

/// The largest threshold whose sensitivity reaches `target`.
pub fn threshold_at_sensitivity(curve: &RocCurve, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!(
            "target sensitivity {target} must lie in (0, 1]"
        )));
    }
    let need = required_true_positives(curve.positives, target);
    let point = curve
        .points
        .iter()
        .find(|p| p.tp >= need)
        .expect("the last curve point has every positive");
    Ok(point.threshold)
}
