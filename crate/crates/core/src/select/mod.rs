//! Group-comparison audits and LASSO feature selection.

pub mod lasso;
pub mod welch;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lasso::{fit_lasso_path, select_features, LassoConfig, LassoFit};
pub use welch::{compare_groups, welch_t, welch_t_summary, TTestResult};

use crate::error::{Error, Result};
use crate::preprocess::DroppedFeature;

/// Final predictor set reported by the selection stage.
pub const REFERENCE_FEATURE_SET: [&str; 16] = crate::cohort::MODEL_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Missingness,
    Shrinkage,
    NotAllowlisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEntry {
    pub feature: String,
    pub reason: DropReason,
    pub detail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub feature: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lambda: f64,
    pub intercept: f64,
    pub cv_curve: Vec<lasso::CvPoint>,
    pub coefficients: Vec<CoefficientRow>,
    pub selected: Vec<String>,
    pub dropped: Vec<DroppedEntry>,
    pub split_audit: Vec<TTestResult>,
}

impl SelectionReport {
    /// `detail` holds the missing fraction for missingness drops and the
    /// coefficient (zero) otherwise.
    pub fn build(
        fit: &LassoFit,
        selected: Vec<String>,
        missingness: &[DroppedFeature],
        split_audit: Vec<TTestResult>,
    ) -> Self {
        let mut dropped: Vec<DroppedEntry> = missingness
            .iter()
            .map(|d| DroppedEntry {
                feature: d.name.clone(),
                reason: DropReason::Missingness,
                detail: d.missing_fraction,
            })
            .collect();
        for (name, &c) in fit.feature_names.iter().zip(&fit.coefficients) {
            if selected.contains(name) {
                continue;
            }
            let reason = if c == 0.0 {
                DropReason::Shrinkage
            } else {
                DropReason::NotAllowlisted
            };
            dropped.push(DroppedEntry {
                feature: name.clone(),
                reason,
                detail: c,
            });
        }
        Self {
            lambda: fit.lambda,
            intercept: fit.intercept,
            cv_curve: fit.cv_curve.clone(),
            coefficients: fit
                .feature_names
                .iter()
                .zip(&fit.coefficients)
                .map(|(f, &c)| CoefficientRow {
                    feature: f.clone(),
                    coefficient: c,
                })
                .collect(),
            selected,
            dropped,
            split_audit,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
