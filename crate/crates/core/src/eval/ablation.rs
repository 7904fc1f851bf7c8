//! Leave-one-feature-out refits scored on the held-out rows.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::auroc;
use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::models::{fit, stratified_split, Family, Hyperparams};
use crate::rng::{derive_seed, stage_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            replicates: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature: String,
    pub auc_without: Option<f64>,
    pub delta_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub family: crate::models::Family,
    pub replicates: usize,
    pub auc_full: f64,
    pub features: Vec<AblationRow>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,auc_full,auc_without,delta_auc\n");
        for r in &self.features {
            let show = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.feature,
                self.auc_full,
                show(r.auc_without),
                show(r.delta_auc)
            ));
        }
        out
    }
}

/// Row indices of one bootstrap resample containing both classes.
fn resample(labels: &[u8], rows: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = stage_rng(seed);
    loop {
        let pick: Vec<usize> = (0..rows.len())
            .map(|_| rows[rng.random_range(0..rows.len())])
            .collect();
        let pos = pick.iter().filter(|&&i| labels[i] == 1).count();
        if pos > 0 && pos < pick.len() {
            return pick;
        }
    }
}

/// Mean test AUROC over bootstrap refits on `ds` restricted to `features`.
fn mean_auc(
    ds: &Dataset,
    features: &[usize],
    samples: &[Vec<usize>],
    test: &Dataset,
    family: Family,
    hp: &Hyperparams,
) -> Result<f64> {
    let sub = ds.select_features(features);
    let test = test.select_features(features);
    let mut total = 0.0;
    for sample in samples {
        let mut train = sub.select_rows(sample);
        train.split = vec![SplitTag::None; train.n_rows()];
        let model = fit(family, &train, hp)?;
        total += auroc(&model.score(&test)?, &test.labels)?;
    }
    Ok(total / samples.len() as f64)
}

/// Refits `family` with each feature removed in turn. Every refit uses the
/// same bootstrap resamples of the training rows and is scored on the test
/// rows; a dataset without a split gets a seeded stratified 70/30 one.
/// Per-feature failures are recorded, not raised.
pub fn ablation_study(
    ds: &Dataset,
    family: Family,
    hp: &Hyperparams,
    cfg: &AblationConfig,
) -> Result<AblationResult> {
    if ds.n_features() < 2 {
        return Err(Error::Config("ablation needs at least two features".into()));
    }
    if cfg.replicates == 0 {
        return Err(Error::Config(
            "ablation needs at least one replicate".into(),
        ));
    }
    let (train_rows, test_rows) = {
        let train: Vec<usize> = ds
            .train_indices()
            .into_iter()
            .filter(|&i| !ds.synthetic[i])
            .collect();
        let test = ds.test_indices();
        if !train.is_empty() && !test.is_empty() {
            (train, test)
        } else {
            let s = stratified_split(&ds.labels, 0.7, derive_seed(cfg.seed, "ablation-split", 0))?;
            (s.train_indices, s.test_indices)
        }
    };
    let test = ds.select_rows(&test_rows);
    let samples: Vec<Vec<usize>> = (0..cfg.replicates)
        .map(|r| {
            resample(
                &ds.labels,
                &train_rows,
                derive_seed(cfg.seed, "ablation", r as u64),
            )
        })
        .collect();

    let all: Vec<usize> = (0..ds.n_features()).collect();
    let auc_full = mean_auc(ds, &all, &samples, &test, family, hp)?;
    let features = (0..ds.n_features())
        .into_par_iter()
        .map(|j| {
            let keep: Vec<usize> = all.iter().copied().filter(|&c| c != j).collect();
            let feature = ds.meta[j].name.clone();
            match mean_auc(ds, &keep, &samples, &test, family, hp) {
                Ok(auc) => AblationRow {
                    feature,
                    auc_without: Some(auc),
                    delta_auc: Some(auc_full - auc),
                    error: None,
                },
                Err(e) => AblationRow {
                    feature,
                    auc_without: None,
                    delta_auc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(AblationResult {
        family,
        replicates: cfg.replicates,
        auc_full,
        features,
    })
}
