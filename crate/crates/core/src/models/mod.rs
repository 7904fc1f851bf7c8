//! Classifier families behind one scoring contract.
//!
//! Every family fits on the rows returned by [`Dataset::fit_indices`] and
//! produces a [`TrainedModel`] whose [`TrainedModel::score`] checks feature
//! names before touching any value. Models persist as versioned JSON.

pub mod gbdt;
pub mod logistic;
pub mod naive_bayes;
pub mod nn;
pub mod split;
pub mod tune;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use split::{stratified_kfold, stratified_split, SplitSpec};
pub use tune::{tune, CvRow, Grid, TuneResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gbdt,
    Logistic,
    GaussianNb,
    ShallowNn,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Gbdt,
        Family::Logistic,
        Family::GaussianNb,
        Family::ShallowNn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gbdt => "gbdt",
            Family::Logistic => "logistic",
            Family::GaussianNb => "gaussian_nb",
            Family::ShallowNn => "shallow_nn",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpValue::Number(v) => write!(f, "{v}"),
            HpValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for HpValue {
    fn from(v: f64) -> Self {
        HpValue::Number(v)
    }
}

impl From<&str> for HpValue {
    fn from(v: &str) -> Self {
        HpValue::Text(v.to_string())
    }
}

pub type Hyperparams = BTreeMap<String, HpValue>;

/// Builds a hyperparameter map from `(key, value)` pairs.
pub fn hp<V: Into<HpValue>>(pairs: impl IntoIterator<Item = (&'static str, V)>) -> Hyperparams {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into()))
        .collect()
}

pub fn format_hp(hp: &Hyperparams) -> String {
    let parts: Vec<String> = hp.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Typed access to a hyperparameter map with per-family key validation.
pub(crate) struct HpReader<'a> {
    hp: &'a Hyperparams,
    family: Family,
}

impl<'a> HpReader<'a> {
    pub fn new(hp: &'a Hyperparams, family: Family, allowed: &[&str]) -> Result<Self> {
        if let Some(bad) = hp.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown hyperparameter `{bad}` for {family}; expected one of {allowed:?}"
            )));
        }
        Ok(Self { hp, family })
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.hp.get(key) {
            None => Ok(default),
            Some(HpValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(other) => Err(Error::Config(format!(
                "{}: hyperparameter `{key}` must be a finite number, got `{other}`",
                self.family
            ))),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.f64(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Config(format!(
                "{}: hyperparameter `{key}` must be a non-negative integer, got {v}",
                self.family
            )));
        }
        Ok(v as usize)
    }

    pub fn text(&self, key: &str, default: &str) -> Result<String> {
        match self.hp.get(key) {
            None => Ok(default.to_string()),
            Some(HpValue::Text(s)) => Ok(s.clone()),
            Some(other) => Err(Error::Config(format!(
                "{}: hyperparameter `{key}` must be text, got `{other}`",
                self.family
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    Gbdt(gbdt::GbdtParams),
    Logistic(logistic::LogisticParams),
    GaussianNb(naive_bayes::NbParams),
    ShallowNn(nn::NnParams),
}

/// Anything that maps one feature row to a probability.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub family: Family,
    pub hyperparams: Hyperparams,
    pub parameters: Parameters,
    pub feature_names: Vec<String>,
    pub manifest_hash: String,
}

impl Predictor for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.parameters {
            Parameters::Gbdt(p) => p.predict_row(x),
            Parameters::Logistic(p) => p.predict_row(x),
            Parameters::GaussianNb(p) => p.predict_row(x),
            Parameters::ShallowNn(p) => p.predict_row(x),
        }
    }
}

impl TrainedModel {
    pub(crate) fn new(
        family: Family,
        hyperparams: Hyperparams,
        parameters: Parameters,
        ds: &Dataset,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            family,
            hyperparams,
            parameters,
            feature_names: ds.feature_names(),
            manifest_hash: String::new(),
        }
    }

    pub fn with_manifest_hash(mut self, hash: impl Into<String>) -> Self {
        self.manifest_hash = hash.into();
        self
    }

    /// Probabilities for every row of `rows`, whose feature names must equal
    /// the training names in the same order.
    pub fn score(&self, rows: &Dataset) -> Result<Vec<f64>> {
        let names = rows.feature_names();
        if names != self.feature_names {
            return Err(Error::Scoring(format!(
                "feature mismatch: model expects {:?}, rows carry {:?}",
                self.feature_names, names
            )));
        }
        let mut buf = vec![0.0; names.len()];
        (0..rows.n_rows())
            .map(|i| {
                for (b, v) in buf.iter_mut().zip(rows.row(i)) {
                    *b = *v;
                }
                if buf.iter().any(|v| v.is_nan()) {
                    return Err(Error::Scoring(format!(
                        "row `{}` has missing values",
                        rows.row_ids[i]
                    )));
                }
                Ok(self.predict_row(&buf))
            })
            .collect()
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
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Fits one family on `train`.
pub fn fit(family: Family, train: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    let rows = train.fit_indices();
    let pos = rows.iter().filter(|&&i| train.labels[i] == 1).count();
    if rows.is_empty() || pos == 0 || pos == rows.len() {
        return Err(Error::DegenerateData(format!(
            "{family} needs both classes in the training rows ({pos} positive of {})",
            rows.len()
        )));
    }
    match family {
        Family::Gbdt => gbdt::fit_gbdt(train, hp),
        Family::Logistic => logistic::fit_logistic(train, hp),
        Family::GaussianNb => naive_bayes::fit_gaussian_nb(train, hp),
        Family::ShallowNn => nn::fit_shallow_nn(train, hp),
    }
}

/// Row-major copy of the fitting rows, with labels.
pub(crate) fn fit_rows(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<u8>) {
    let rows = ds.fit_indices();
    (
        rows.iter().map(|&i| ds.row(i).to_vec()).collect(),
        rows.iter().map(|&i| ds.labels[i]).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;
    use rand::Rng;

    fn toy(seed: u64) -> Dataset {
        let mut rng = stage_rng(seed);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
            .collect();
        let labels = rows
            .iter()
            .map(|r| u8::from(r[0] + 0.3 * r[1] + 0.2 * (rng.random::<f64>() - 0.5) > 0.0))
            .collect();
        Dataset::from_rows(&rows, labels, &["a", "b"]).unwrap()
    }

    fn small_hp(family: Family) -> Hyperparams {
        match family {
            Family::Gbdt => hp([("n_trees", 20.0), ("min_samples_leaf", 5.0)]),
            Family::ShallowNn => hp([("epochs", 50.0)]),
            _ => Hyperparams::new(),
        }
    }

    #[test]
    fn persistence_round_trip_for_every_family() {
        let ds = toy(1);
        let dir = tempfile::tempdir().unwrap();
        for family in Family::ALL {
            let model = fit(family, &ds, &small_hp(family))
                .unwrap()
                .with_manifest_hash("abc");
            let path = dir.path().join(format!("{family}.json"));
            model.save(&path).unwrap();
            let a = TrainedModel::load(&path).unwrap();
            let b = TrainedModel::load(&path).unwrap();
            let sa = a.score(&ds).unwrap();
            let s0 = model.score(&ds).unwrap();
            for (x, y) in sa.iter().zip(&s0) {
                assert!((x - y).abs() <= 1e-12, "{family}");
            }
            assert_eq!(sa, b.score(&ds).unwrap());
            assert!(sa.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn row_permutation_permutes_scores() {
        let ds = toy(2);
        let model = fit(Family::Gbdt, &ds, &small_hp(Family::Gbdt)).unwrap();
        let perm: Vec<usize> = (0..ds.n_rows()).rev().collect();
        let s = model.score(&ds).unwrap();
        let sp = model.score(&ds.select_rows(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(sp[k], s[i]);
        }
    }

    #[test]
    fn feature_order_is_checked() {
        let ds = toy(3);
        let model = fit(Family::Logistic, &ds, &Hyperparams::new()).unwrap();
        let swapped = ds.select_features(&[1, 0]);
        assert!(matches!(model.score(&swapped), Err(Error::Scoring(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let ds = toy(4);
        let mut model = fit(Family::GaussianNb, &ds, &Hyperparams::new()).unwrap();
        model.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(Error::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn unknown_hyperparameter_is_rejected() {
        let ds = toy(5);
        let err = fit(Family::Gbdt, &ds, &hp([("n_tres", 3.0)])).unwrap_err();
        assert!(err.to_string().contains("n_tres"));
    }

    #[test]
    fn single_class_is_degenerate() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![1, 1], &["a"]).unwrap();
        for family in Family::ALL {
            assert!(matches!(
                fit(family, &ds, &Hyperparams::new()),
                Err(Error::DegenerateData(_))
            ));
        }
    }
}
