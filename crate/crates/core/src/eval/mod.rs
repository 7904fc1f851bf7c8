//! Discrimination metrics, fixed-sensitivity operating points and ablation.

pub mod ablation;
pub mod bootstrap;
pub mod confusion;
pub mod roc;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablation::{ablation_study, AblationConfig, AblationResult};
pub use bootstrap::{bootstrap_auroc_ci, BootstrapCi};
pub use confusion::{confusion_metrics, ConfusionMetrics};
pub use roc::{auroc, roc_curve, threshold_at_sensitivity, RocCurve};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub replicates: usize,
    pub level: f64,
    pub target_sensitivity: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            replicates: 2000,
            level: 0.95,
            target_sensitivity: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub chosen_threshold: f64,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub undefined: Vec<String>,
    pub bootstrap_redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMeta {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ModelMetrics>,
    pub bootstrap: BootstrapMeta,
    pub target_sensitivity: f64,
}

/// AUROC with its bootstrap interval, plus the confusion metrics at the
/// largest threshold that reaches the target sensitivity.
pub fn evaluate_scores(
    model: &str,
    scores: &[f64],
    labels: &[u8],
    cfg: &EvalConfig,
) -> Result<(ModelMetrics, RocCurve)> {
    let curve = roc_curve(scores, labels)?;
    let ci = bootstrap_auroc_ci(scores, labels, cfg.replicates, cfg.level, cfg.seed)?;
    let threshold = threshold_at_sensitivity(&curve, cfg.target_sensitivity)?;
    let m = confusion_metrics(scores, labels, threshold)?;
    Ok((
        ModelMetrics {
            model: model.to_string(),
            auroc: curve.auroc,
            ci_low: ci.low,
            ci_high: ci.high,
            chosen_threshold: threshold,
            accuracy: m.accuracy,
            f1: m.f1,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            ppv: m.ppv,
            npv: m.npv,
            undefined: m.undefined,
            bootstrap_redraws: ci.redraws,
        },
        curve,
    ))
}

impl MetricsReport {
    pub fn new(rows: Vec<ModelMetrics>, cfg: &EvalConfig) -> Self {
        Self {
            rows,
            bootstrap: BootstrapMeta {
                replicates: cfg.replicates,
                level: cfg.level,
                seed: cfg.seed,
            },
            target_sensitivity: cfg.target_sensitivity,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per model, three decimals, `NA` for undefined ratios.
    pub fn to_table_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
        let mut out =
            String::from("model,auroc_95ci,accuracy,f1,sensitivity,specificity,ppv,npv\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.3} ({:.3}-{:.3}),{},{},{},{},{},{}\n",
                r.model,
                r.auroc,
                r.ci_low,
                r.ci_high,
                f(r.accuracy),
                f(r.f1),
                f(r.sensitivity),
                f(r.specificity),
                f(r.ppv),
                f(r.npv)
            ));
        }
        out
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_table_csv()).map_err(|e| Error::io(csv_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
