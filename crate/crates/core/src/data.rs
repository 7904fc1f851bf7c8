//! The tabular container shared by every stage.
//!
//! Missing cells are stored as `NaN` in the feature matrix; [`Dataset::is_missing`]
//! is the mask. Rows carry a split tag and a synthetic-provenance flag so that
//! SMOTE rows can never leak into test-side computations.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    BinaryFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    /// Fraction of missing cells, measured before imputation.
    pub missing_fraction: f64,
    /// Training-split mean (unused for flags).
    pub mean: f64,
    /// Training-split population standard deviation (unused for flags).
    pub sd: f64,
}

impl FeatureMeta {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
            missing_fraction: 0.0,
            mean: 0.0,
            sd: 1.0,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self::new(name, FeatureKind::Continuous)
    }

    pub fn flag(name: impl Into<String>) -> Self {
        Self::new(name, FeatureKind::BinaryFlag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub row_ids: Vec<String>,
    pub matrix: Array2<f64>,
    pub labels: Vec<u8>,
    pub meta: Vec<FeatureMeta>,
    pub split: Vec<SplitTag>,
    pub synthetic: Vec<bool>,
}

impl Dataset {
    /// Builds an untagged dataset with generated row ids.
    pub fn new(matrix: Array2<f64>, labels: Vec<u8>, meta: Vec<FeatureMeta>) -> Result<Self> {
        let n = matrix.nrows();
        let row_ids = (0..n).map(|i| i.to_string()).collect();
        Self::with_parts(
            row_ids,
            matrix,
            labels,
            meta,
            vec![SplitTag::None; n],
            vec![false; n],
        )
    }

    pub fn with_parts(
        row_ids: Vec<String>,
        matrix: Array2<f64>,
        labels: Vec<u8>,
        meta: Vec<FeatureMeta>,
        split: Vec<SplitTag>,
        synthetic: Vec<bool>,
    ) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != meta.len() {
            return Err(Error::Config(format!(
                "matrix has {} columns but {} feature descriptors",
                matrix.ncols(),
                meta.len()
            )));
        }
        if labels.len() != n || row_ids.len() != n || split.len() != n || synthetic.len() != n {
            return Err(Error::Config(
                "row-aligned vectors disagree with matrix row count".into(),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Config(format!("label {bad} is not binary")));
        }
        Ok(Self {
            row_ids,
            matrix,
            labels,
            meta,
            split,
            synthetic,
        })
    }

    /// Convenience constructor from row vectors, all features continuous.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>, names: &[&str]) -> Result<Self> {
        let p = names.len();
        let mut matrix = Array2::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Config(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                matrix[[i, j]] = v;
            }
        }
        let meta = names.iter().map(|n| FeatureMeta::continuous(*n)).collect();
        Self::new(matrix, labels, meta)
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.matrix[[i, j]].is_nan()
    }

    pub fn missing_cells(&self) -> usize {
        self.matrix.iter().filter(|v| v.is_nan()).count()
    }

    pub fn indices_tagged(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.split[i] == tag)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_tagged(SplitTag::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_tagged(SplitTag::Test)
    }

    /// Rows that take part in fitting: tagged train, or everything when no
    /// split has been assigned yet.
    pub fn fit_indices(&self) -> Vec<usize> {
        let train = self.train_indices();
        if train.is_empty() && self.split.iter().all(|t| *t == SplitTag::None) {
            (0..self.n_rows()).collect()
        } else {
            train
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
            matrix: self.matrix.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
            split: idx.iter().map(|&i| self.split[i]).collect(),
            synthetic: idx.iter().map(|&i| self.synthetic[i]).collect(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Dataset {
        Dataset {
            row_ids: self.row_ids.clone(),
            matrix: self.matrix.select(Axis(1), cols),
            labels: self.labels.clone(),
            meta: cols.iter().map(|&j| self.meta[j].clone()).collect(),
            split: self.split.clone(),
            synthetic: self.synthetic.clone(),
        }
    }

    /// Keeps the named features, in the order given.
    pub fn select_named(&self, names: &[String]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|n| {
                self.feature_index(n).ok_or_else(|| {
                    Error::Selection(format!("feature `{n}` not present in dataset"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_features(&cols))
    }

    pub fn without_feature(&self, j: usize) -> Dataset {
        let cols: Vec<usize> = (0..self.n_features()).filter(|&c| c != j).collect();
        self.select_features(&cols)
    }

    pub fn with_tags(mut self, train: &[usize], test: &[usize]) -> Dataset {
        self.split = vec![SplitTag::None; self.n_rows()];
        for &i in train {
            self.split[i] = SplitTag::Train;
        }
        for &i in test {
            self.split[i] = SplitTag::Test;
        }
        self
    }

    /// Appends rows (used by SMOTE). Rows are tagged train and synthetic.
    pub fn append_synthetic(&mut self, rows: &[Vec<f64>], label: u8) {
        if rows.is_empty() {
            return;
        }
        let p = self.n_features();
        let start = self.n_rows();
        let mut flat = Vec::with_capacity(rows.len() * p);
        for r in rows {
            flat.extend_from_slice(r);
        }
        let extra = Array2::from_shape_vec((rows.len(), p), flat).expect("synthetic row width");
        self.matrix
            .append(Axis(0), extra.view())
            .expect("synthetic rows share the feature axis");
        for k in 0..rows.len() {
            self.row_ids.push(format!("synthetic-{}", start + k));
            self.labels.push(label);
            self.split.push(SplitTag::Train);
            self.synthetic.push(true);
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = DatasetFile::from(self);
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Dataset> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DatasetFile = serde_json::from_str(&text)?;
        file.into_dataset()
    }
}

/// On-disk form: `null` marks a missing cell, which plain `f64` JSON cannot.
#[derive(Serialize, Deserialize)]
struct DatasetFile {
    meta: Vec<FeatureMeta>,
    row_ids: Vec<String>,
    labels: Vec<u8>,
    split: Vec<SplitTag>,
    synthetic: Vec<bool>,
    rows: Vec<Vec<Option<f64>>>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        let rows = ds
            .matrix
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .map(|&v| if v.is_nan() { None } else { Some(v) })
                    .collect()
            })
            .collect();
        DatasetFile {
            meta: ds.meta.clone(),
            row_ids: ds.row_ids.clone(),
            labels: ds.labels.clone(),
            split: ds.split.clone(),
            synthetic: ds.synthetic.clone(),
            rows,
        }
    }
}

impl DatasetFile {
    fn into_dataset(self) -> Result<Dataset> {
        let p = self.meta.len();
        let n = self.rows.len();
        let mut matrix = Array2::from_elem((n, p), f64::NAN);
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Config(format!(
                    "dataset row {i} has {} cells, expected {p}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    matrix[[i, j]] = *v;
                }
            }
        }
        Dataset::with_parts(
            self.row_ids,
            matrix,
            self.labels,
            self.meta,
            self.split,
            self.synthetic,
        )
    }
}
