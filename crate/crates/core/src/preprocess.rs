//! Missingness filter, flag encoding, KNN imputation and z-scoring.
//!
//! Every statistic (neighbor pool, scales, means, standard deviations) is
//! fitted on the rows tagged [`SplitTag::Train`] (or on all rows when the
//! dataset carries no split yet) and then applied unchanged to every row.
//! The only cohort-wide quantity is each feature's missing fraction, which
//! the selection rule measures across the whole cohort.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Features with a missing fraction strictly above this are dropped.
    pub missing_threshold: f64,
    pub knn_k: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            missing_threshold: 0.20,
            knn_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub missing_fraction: f64,
}

/// Drops every feature whose missing fraction exceeds `threshold`, keeping the
/// survivors in order. Records the measured fraction on every feature.
pub fn filter_missingness(ds: &Dataset, threshold: f64) -> Result<(Dataset, Vec<DroppedFeature>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "missingness threshold {threshold} not in (0, 1]"
        )));
    }
    let n = ds.n_rows();
    if n == 0 {
        return Err(Error::DegenerateData("dataset has no rows".into()));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut measured = ds.clone();
    for j in 0..ds.n_features() {
        let missing = ds.matrix.column(j).iter().filter(|v| v.is_nan()).count();
        let fraction = missing as f64 / n as f64;
        measured.meta[j].missing_fraction = fraction;
        if fraction > threshold {
            dropped.push(DroppedFeature {
                name: ds.meta[j].name.clone(),
                missing_fraction: fraction,
            });
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "every feature exceeds the {threshold} missingness threshold"
        )));
    }
    Ok((measured.select_features(&keep), dropped))
}

/// Missing flag cells become 0 (absence). Observed values must lie in
/// `[0, 1]`; fractional values (per-stay charting averages) are kept.
pub fn encode_flags(ds: &Dataset) -> Result<Dataset> {
    let mut out = ds.clone();
    for (j, meta) in ds.meta.iter().enumerate() {
        if meta.kind != FeatureKind::BinaryFlag {
            continue;
        }
        for i in 0..ds.n_rows() {
            let v = out.matrix[[i, j]];
            if v.is_nan() {
                out.matrix[[i, j]] = 0.0;
            } else if !(0.0..=1.0).contains(&v) {
                return Err(Error::FlagRange {
                    feature: meta.name.clone(),
                    row: i,
                    value: v,
                });
            }
        }
    }
    Ok(out)
}

/// A fitted nearest-neighbor imputer: the training rows as observed, and
/// per-feature distance weights (1/sd over observed training values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnImputer {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub inverse_scales: Vec<f64>,
    /// Training rows before imputation; `None` marks a missing cell.
    pub reference: Vec<Vec<Option<f64>>>,
}

fn population_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl KnnImputer {
    pub fn fit(ds: &Dataset, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("knn k must be at least 1".into()));
        }
        let rows = ds.fit_indices();
        let p = ds.n_features();
        let reference: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|&i| {
                (0..p)
                    .map(|j| Some(ds.matrix[[i, j]]).filter(|v| !v.is_nan()))
                    .collect()
            })
            .collect();
        let inverse_scales = (0..p)
            .map(|j| {
                let observed: Vec<f64> = reference.iter().filter_map(|r| r[j]).collect();
                if observed.len() < 2 {
                    return 0.0;
                }
                let (_, sd) = population_sd(&observed);
                if sd > 0.0 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            k,
            feature_names: ds.feature_names(),
            inverse_scales,
            reference,
        })
    }

    /// Scaled squared distance over dimensions observed in both rows.
    fn distance2(&self, row: &[f64], other: &[Option<f64>]) -> f64 {
        let mut acc = 0.0;
        for (d, (&a, b)) in row.iter().zip(other).enumerate() {
            if let (false, Some(b)) = (a.is_nan(), b) {
                let z = (a - b) * self.inverse_scales[d];
                acc += z * z;
            }
        }
        acc
    }

    fn impute_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        if !row.iter().any(|v| v.is_nan()) {
            return out;
        }
        let dist: Vec<f64> = self
            .reference
            .iter()
            .map(|r| self.distance2(row, r))
            .collect();
        let mut order: Vec<usize> = (0..self.reference.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        for (j, v) in row.iter().enumerate() {
            if !v.is_nan() {
                continue;
            }
            let mut sum = 0.0;
            let mut taken = 0;
            for &c in &order {
                if let Some(x) = self.reference[c][j] {
                    sum += x;
                    taken += 1;
                    if taken == self.k {
                        break;
                    }
                }
            }
            out[j] = sum / taken as f64;
        }
        out
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.feature_names() != self.feature_names {
            return Err(Error::Config(
                "imputer fitted on a different feature list".into(),
            ));
        }
        for j in 0..ds.n_features() {
            let needs = ds.matrix.column(j).iter().any(|v| v.is_nan());
            let observed = self.reference.iter().filter(|r| r[j].is_some()).count();
            if needs && observed < self.k {
                return Err(Error::Imputation {
                    feature: self.feature_names[j].clone(),
                    observed,
                    k: self.k,
                });
            }
        }
        let rows: Vec<Vec<f64>> = (0..ds.n_rows())
            .into_par_iter()
            .map(|i| self.impute_row(&ds.row(i).to_vec()))
            .collect();
        let mut out = ds.clone();
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                out.matrix[[i, j]] = *v;
            }
        }
        Ok(out)
    }
}

/// Fills every missing cell with the mean of its `k` nearest training rows
/// that observe the feature.
pub fn knn_impute(ds: &Dataset, k: usize) -> Result<Dataset> {
    KnnImputer::fit(ds, k)?.transform(ds)
}

/// Standardizes continuous features with training mean and population sd.
/// A constant training column maps to all zeros and yields a warning.
pub fn zscore_fit_apply(ds: &Dataset) -> Result<(Dataset, Vec<String>)> {
    if ds.missing_cells() > 0 {
        return Err(Error::Config(
            "z-scoring requires a fully imputed dataset".into(),
        ));
    }
    let rows = ds.fit_indices();
    if rows.is_empty() {
        return Err(Error::DegenerateData(
            "no training rows to fit z-scores".into(),
        ));
    }
    let mut out = ds.clone();
    let mut warnings = Vec::new();
    for j in 0..ds.n_features() {
        if ds.meta[j].kind != FeatureKind::Continuous {
            continue;
        }
        let values: Vec<f64> = rows.iter().map(|&i| ds.matrix[[i, j]]).collect();
        let (mean, sd) = population_sd(&values);
        out.meta[j].mean = mean;
        out.meta[j].sd = sd;
        if sd == 0.0 {
            warnings.push(format!(
                "feature `{}` is constant on the training split; set to 0",
                ds.meta[j].name
            ));
        }
        standardize_column(&mut out, j, mean, sd);
    }
    Ok((out, warnings))
}

fn standardize_column(ds: &mut Dataset, j: usize, mean: f64, sd: f64) {
    for v in ds.matrix.column_mut(j) {
        *v = if sd == 0.0 { 0.0 } else { (*v - mean) / sd };
    }
}

/// Everything needed to push new records through the same transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub missing_threshold: f64,
    pub dropped: Vec<DroppedFeature>,
    pub knn_k: usize,
    /// Surviving features with fitted mean/sd.
    pub features: Vec<FeatureMeta>,
    pub warnings: Vec<String>,
    pub imputer: KnnImputer,
}

impl PreprocessManifest {
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

    /// Applies the fitted transformation to raw records that carry at least
    /// the surviving feature columns.
    pub fn apply(&self, raw: &Dataset) -> Result<Dataset> {
        let names: Vec<String> = self.features.iter().map(|m| m.name.clone()).collect();
        let mut ds = raw.select_named(&names)?;
        for (dst, src) in ds.meta.iter_mut().zip(&self.features) {
            dst.kind = src.kind;
        }
        let ds = encode_flags(&ds)?;
        let mut ds = self.imputer.transform(&ds)?;
        for (j, m) in self.features.iter().enumerate() {
            ds.meta[j] = m.clone();
            if m.kind == FeatureKind::Continuous {
                standardize_column(&mut ds, j, m.mean, m.sd);
            }
        }
        Ok(ds)
    }
}

/// Runs the full chain: missingness filter, flag encoding, KNN imputation,
/// z-score.
pub fn fit_transform(
    ds: &Dataset,
    cfg: &PreprocessConfig,
) -> Result<(Dataset, PreprocessManifest)> {
    let (filtered, dropped) = filter_missingness(ds, cfg.missing_threshold)?;
    let encoded = encode_flags(&filtered)?;
    let imputer = KnnImputer::fit(&encoded, cfg.knn_k)?;
    let imputed = imputer.transform(&encoded)?;
    let (scaled, warnings) = zscore_fit_apply(&imputed)?;
    let manifest = PreprocessManifest {
        missing_threshold: cfg.missing_threshold,
        dropped,
        knn_k: cfg.knn_k,
        features: scaled.meta.clone(),
        warnings,
        imputer,
    };
    Ok((scaled, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;
    use proptest::prelude::*;

    const NAN: f64 = f64::NAN;

    fn ds(rows: &[Vec<f64>], names: &[&str]) -> Dataset {
        let labels = (0..rows.len()).map(|i| (i % 2) as u8).collect();
        Dataset::from_rows(rows, labels, names).unwrap()
    }

    #[test]
    fn drops_above_threshold_keeps_boundary() {
        // 20 rows: a has 5 missing (25%), b has 4 (exactly 20%).
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                vec![
                    if i < 5 { NAN } else { i as f64 },
                    if i < 4 { NAN } else { i as f64 },
                    1.0,
                ]
            })
            .collect();
        let (out, dropped) = filter_missingness(&ds(&rows, &["a", "b", "c"]), 0.2).unwrap();
        assert_eq!(out.feature_names(), vec!["b", "c"]);
        assert_eq!(dropped[0].name, "a");
        assert_eq!(dropped[0].missing_fraction, 0.25);
        assert_eq!(out.meta[0].missing_fraction, 0.2);
    }

    #[test]
    fn five_feature_fractions() {
        // 100 rows; missing fractions {0, 0.1, 0.21, 0.5, 0.19}.
        let fracs = [0usize, 10, 21, 50, 19];
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                fracs
                    .iter()
                    .map(|&m| if i < m { NAN } else { 1.0 })
                    .collect()
            })
            .collect();
        let (out, dropped) =
            filter_missingness(&ds(&rows, &["f0", "f1", "f2", "f3", "f4"]), 0.2).unwrap();
        assert_eq!(out.n_features(), 3);
        assert_eq!(out.feature_names(), vec!["f0", "f1", "f4"]);
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn all_dropped_is_config_error() {
        let rows = vec![vec![NAN], vec![NAN], vec![1.0]];
        assert!(matches!(
            filter_missingness(&ds(&rows, &["a"]), 0.2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn flags_absence_identity_and_fraction() {
        let mut d = ds(&[vec![NAN], vec![1.0], vec![0.29]], &["gauge20_outside"]);
        d.meta[0].kind = FeatureKind::BinaryFlag;
        let out = encode_flags(&d).unwrap();
        assert_eq!(out.matrix.column(0).to_vec(), vec![0.0, 1.0, 0.29]);
    }

    #[test]
    fn flag_out_of_range_is_rejected() {
        let mut d = ds(&[vec![1.5]], &["gauge20_outside"]);
        d.meta[0].kind = FeatureKind::BinaryFlag;
        assert!(matches!(encode_flags(&d), Err(Error::FlagRange { .. })));
    }

    #[test]
    fn constant_neighborhood_imputes_constant() {
        // Target row 0 is near rows 1..=3 (value 5); rows 4, 5 are far away.
        let rows = vec![
            vec![0.0, NAN],
            vec![0.1, 5.0],
            vec![-0.1, 5.0],
            vec![0.2, 5.0],
            vec![50.0, 100.0],
            vec![60.0, 200.0],
        ];
        let out = knn_impute(&ds(&rows, &["x", "y"]), 3).unwrap();
        assert_eq!(out.matrix[[0, 1]], 5.0);
    }

    #[test]
    fn no_missing_cells_is_identity() {
        let d = ds(&[vec![1.0, 2.0], vec![3.0, 4.0]], &["a", "b"]);
        assert_eq!(knn_impute(&d, 1).unwrap().matrix, d.matrix);
    }

    #[test]
    fn two_feature_toy_hand_computed() {
        // x sd over observed rows {0,1,3,10} is population sd = 3.8971...;
        // distances from x=0: rows 1 (1), 2 (3), 3 (10), so the two nearest
        // observed y values are 1.0 and 3.0.
        let rows = vec![
            vec![0.0, NAN],
            vec![1.0, 1.0],
            vec![3.0, 3.0],
            vec![10.0, 9.0],
        ];
        let out = knn_impute(&ds(&rows, &["x", "y"]), 2).unwrap();
        assert_eq!(out.matrix[[0, 1]], 2.0);
    }

    #[test]
    fn too_few_observed_rows_names_feature() {
        let rows = vec![vec![0.0, NAN], vec![1.0, 1.0], vec![3.0, NAN]];
        match knn_impute(&ds(&rows, &["x", "y"]), 2) {
            Err(Error::Imputation {
                feature,
                observed,
                k,
            }) => {
                assert_eq!(feature, "y");
                assert_eq!((observed, k), (1, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zscore_three_values() {
        let (out, warnings) =
            zscore_fit_apply(&ds(&[vec![2.0], vec![4.0], vec![6.0]], &["a"])).unwrap();
        let sd = (8.0f64 / 3.0).sqrt();
        let expected = [-2.0 / sd, 0.0, 2.0 / sd];
        for (got, want) in out.matrix.column(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((out.matrix[[0, 0]] + 1.2247).abs() < 1e-4);
        assert!(warnings.is_empty());
    }

    #[test]
    fn zscore_constant_column_warns() {
        let (out, warnings) = zscore_fit_apply(&ds(&[vec![3.0], vec![3.0]], &["a"])).unwrap();
        assert!(out.matrix.iter().all(|&v| v == 0.0));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn zscore_leaves_flags() {
        let mut d = ds(&[vec![0.0], vec![1.0], vec![1.0]], &["f"]);
        d.meta[0].kind = FeatureKind::BinaryFlag;
        let (out, _) = zscore_fit_apply(&d).unwrap();
        assert_eq!(out.matrix, d.matrix);
    }

    /// Direct O(n^2) neighbor search, written from the definition.
    fn brute_impute(rows: &[Vec<f64>], train: &[usize], k: usize) -> Vec<Vec<f64>> {
        let p = rows[0].len();
        let scale: Vec<f64> = (0..p)
            .map(|d| {
                let obs: Vec<f64> = train
                    .iter()
                    .map(|&i| rows[i][d])
                    .filter(|v| !v.is_nan())
                    .collect();
                if obs.len() < 2 {
                    return 0.0;
                }
                let m = obs.iter().sum::<f64>() / obs.len() as f64;
                let v = obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / obs.len() as f64;
                if v > 0.0 {
                    1.0 / v.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        rows.iter()
            .map(|row| {
                let mut out = row.clone();
                for j in 0..p {
                    if !row[j].is_nan() {
                        continue;
                    }
                    let mut cands: Vec<(f64, usize, f64)> = Vec::new();
                    for (pos, &c) in train.iter().enumerate() {
                        if rows[c][j].is_nan() {
                            continue;
                        }
                        let mut d2 = 0.0;
                        for d in 0..p {
                            if !row[d].is_nan() && !rows[c][d].is_nan() {
                                d2 += ((row[d] - rows[c][d]) * scale[d]).powi(2);
                            }
                        }
                        cands.push((d2, pos, rows[c][j]));
                    }
                    let mut chosen = Vec::new();
                    for _ in 0..k {
                        let best = (0..cands.len())
                            .filter(|i| !chosen.contains(i))
                            .min_by(|&a, &b| {
                                cands[a]
                                    .0
                                    .total_cmp(&cands[b].0)
                                    .then(cands[a].1.cmp(&cands[b].1))
                            })
                            .unwrap();
                        chosen.push(best);
                    }
                    out[j] = chosen.iter().map(|&i| cands[i].2).sum::<f64>() / k as f64;
                }
                out
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn knn_matches_brute_force(
            cells in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -3i32..4), 3), 12..60),
            k in 1usize..4,
        ) {
            let rows: Vec<Vec<f64>> = cells.iter()
                .map(|r| r.iter().map(|c| c.map(|v| v as f64).unwrap_or(NAN)).collect())
                .collect();
            let n = rows.len();
            let mut d = ds(&rows, &["a", "b", "c"]);
            let train: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
            d = d.with_tags(&train, &test);
            let enough = (0..3).all(|j| train.iter().filter(|&&i| !rows[i][j].is_nan()).count() >= k);
            prop_assume!(enough);
            let got = knn_impute(&d, k).unwrap();
            let want = brute_impute(&rows, &train, k);
            for i in 0..n {
                for j in 0..3 {
                    prop_assert_eq!(got.matrix[[i, j]].to_bits(), want[i][j].to_bits());
                }
            }
        }

        #[test]
        fn zscore_train_moments(values in prop::collection::vec(-1e3f64..1e3, 3..50)) {
            let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
            let (out, w) = zscore_fit_apply(&ds(&rows, &["a"])).unwrap();
            prop_assume!(w.is_empty());
            let col = out.matrix.column(0).to_vec();
            let (mean, sd) = population_sd(&col);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fitted_parameters_ignore_test_rows() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let x = i as f64;
                vec![
                    x,
                    if i % 5 == 0 {
                        NAN
                    } else {
                        (x * 0.7).sin() * 10.0
                    },
                    if i % 7 == 0 { NAN } else { x * x / 10.0 },
                ]
            })
            .collect();
        let train: Vec<usize> = (0..40).filter(|i| i % 4 != 0).collect();
        let test: Vec<usize> = (0..40).filter(|i| i % 4 == 0).collect();
        let clean = ds(&rows, &["a", "b", "c"]).with_tags(&train, &test);
        let mut corrupted = clean.clone();
        for &i in &test {
            for j in 0..3 {
                corrupted.matrix[[i, j]] += 1000.0;
            }
        }
        let cfg = PreprocessConfig::default();
        let (out_a, man_a) = fit_transform(&clean, &cfg).unwrap();
        let (out_b, man_b) = fit_transform(&corrupted, &cfg).unwrap();
        assert_eq!(man_a, man_b);
        for &i in &train {
            for j in 0..3 {
                assert_eq!(
                    out_a.matrix[[i, j]].to_bits(),
                    out_b.matrix[[i, j]].to_bits()
                );
            }
        }
        assert_eq!(out_a.split[0], SplitTag::Test);
    }

    #[test]
    fn manifest_apply_reproduces_fit_transform() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64, if i % 4 == 1 { NAN } else { (i % 7) as f64 }])
            .collect();
        let d = ds(&rows, &["a", "b"]);
        let (out, man) = fit_transform(&d, &PreprocessConfig::default()).unwrap();
        let again = man.apply(&d).unwrap();
        assert_eq!(out.matrix, again.matrix);
    }
}
