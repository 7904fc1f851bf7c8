//! Grid search by stratified k-fold cross-validated AUROC.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{fit, format_hp, split::stratified_kfold, Family, HpValue, Hyperparams};
use crate::balance::{smote, SmoteConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::roc::auroc;
use crate::rng::derive_seed;

/// Ordered hyperparameter grid. Points enumerate the cartesian product with
/// the first key varying slowest; JSON objects keep their key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grid(pub Vec<(String, Vec<HpValue>)>);

impl Grid {
    pub fn new<V: Into<HpValue>>(axes: Vec<(&str, Vec<V>)>) -> Self {
        Grid(
            axes.into_iter()
                .map(|(k, vs)| (k.to_string(), vs.into_iter().map(Into::into).collect()))
                .collect(),
        )
    }

    pub fn points(&self, base: &Hyperparams) -> Result<Vec<Hyperparams>> {
        if let Some((k, _)) = self.0.iter().find(|(_, vs)| vs.is_empty()) {
            return Err(Error::Config(format!("grid axis `{k}` has no values")));
        }
        let mut points = vec![base.clone()];
        for (key, values) in &self.0 {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(key.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
        map.into_iter()
            .map(|(k, v)| {
                serde_json::from_value::<Vec<HpValue>>(v)
                    .map(|vs| (k, vs))
                    .map_err(serde::de::Error::custom)
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyperparams: Hyperparams,
    pub fold_aurocs: Vec<f64>,
    pub mean_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub family: Family,
    pub best: Hyperparams,
    pub best_mean_auroc: f64,
    pub table: Vec<CvRow>,
}

/// Scores every grid point by mean validation AUROC over `k` stratified
/// folds of the fitting rows. When `balance` is given, SMOTE runs on each
/// training fold only. Ties keep the earliest point.
pub fn tune(
    train: &Dataset,
    family: Family,
    base: &Hyperparams,
    grid: &Grid,
    k: usize,
    balance: Option<&SmoteConfig>,
    seed: u64,
) -> Result<TuneResult> {
    let points = grid.points(base)?;
    let rows = train.fit_indices();
    let labels: Vec<u8> = rows.iter().map(|&i| train.labels[i]).collect();
    let folds = stratified_kfold(&labels, k, derive_seed(seed, "tune-folds", 0))?;
    let fold_data: Vec<(Dataset, Dataset)> = folds
        .iter()
        .enumerate()
        .map(|(f, spec)| {
            let fit_rows: Vec<usize> = spec.train_indices.iter().map(|&i| rows[i]).collect();
            let valid_rows: Vec<usize> = spec.test_indices.iter().map(|&i| rows[i]).collect();
            let mut fold_train = train.select_rows(&fit_rows);
            if let Some(cfg) = balance {
                let cfg = SmoteConfig {
                    seed: derive_seed(seed, "tune-smote", f as u64),
                    ..cfg.clone()
                };
                fold_train = smote(&fold_train, &cfg)?;
            }
            Ok((fold_train, train.select_rows(&valid_rows)))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..k).map(move |f| (p, f)))
        .collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let (fit_ds, valid) = &fold_data[f];
            let model = fit(family, fit_ds, &points[p])?;
            auroc(&model.score(valid)?, &valid.labels)
        })
        .collect();

    let mut table = Vec::with_capacity(points.len());
    let mut scores = scores.into_iter();
    for point in &points {
        let fold_aurocs = scores
            .by_ref()
            .take(k)
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::Tuning {
                point: format_hp(point),
                source: Box::new(e),
            })?;
        let mean_auroc = fold_aurocs.iter().sum::<f64>() / k as f64;
        table.push(CvRow {
            hyperparams: point.clone(),
            fold_aurocs,
            mean_auroc,
        });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_auroc > table[best].mean_auroc {
            best = i;
        }
    }
    Ok(TuneResult {
        family,
        best: table[best].hyperparams.clone(),
        best_mean_auroc: table[best].mean_auroc,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::hp;
    use crate::rng::stage_rng;
    use crate::select::lasso::sigmoid;
    use rand::Rng;

    fn planted(n: usize, seed: u64) -> Dataset {
        let mut rng = stage_rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            labels.push(u8::from(
                rng.random::<f64>() < sigmoid(3.0 * r[0] - 2.0 * r[1] - 1.0),
            ));
            rows.push(r);
        }
        Dataset::from_rows(&rows, labels, &["a", "b", "c"]).unwrap()
    }

    #[test]
    fn grid_order_first_key_slowest() {
        let g = Grid::new(vec![("x", vec![1.0, 2.0]), ("y", vec![10.0, 20.0, 30.0])]);
        let pts = g.points(&Hyperparams::new()).unwrap();
        assert_eq!(pts.len(), 6);
        let xy: Vec<(String, String)> = pts
            .iter()
            .map(|p| (p["x"].to_string(), p["y"].to_string()))
            .collect();
        assert_eq!(xy[0], ("1".into(), "10".into()));
        assert_eq!(xy[1], ("1".into(), "20".into()));
        assert_eq!(xy[3], ("2".into(), "10".into()));
        let json =
            serde_json::to_string(&Grid::new(vec![("z", vec![1.0]), ("a", vec![2.0])])).unwrap();
        assert_eq!(json, r#"{"z":[1.0],"a":[2.0]}"#);
        let back: Grid = serde_json::from_str(r#"{"z":[1.0,"l2"],"a":[2.0]}"#).unwrap();
        assert_eq!(back.0[0].0, "z");
        assert_eq!(back.0[0].1[1], HpValue::Text("l2".into()));
    }

    #[test]
    fn single_point_grid() {
        let ds = planted(150, 1);
        let g = Grid::new(vec![("strength", vec![0.1])]);
        let r = tune(&ds, Family::Logistic, &Hyperparams::new(), &g, 5, None, 7).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.best["strength"], HpValue::Number(0.1));
        assert_eq!(r.best_mean_auroc, r.table[0].mean_auroc);
    }

    #[test]
    fn table_covers_grid_and_runs_smote_in_folds() {
        let ds = planted(200, 2);
        let g = Grid::new(vec![
            ("n_trees", vec![5.0, 10.0]),
            ("max_leaves", vec![3.0, 7.0]),
        ]);
        let base = hp([("min_samples_leaf", 5.0)]);
        let smote_cfg = SmoteConfig::default();
        let a = tune(&ds, Family::Gbdt, &base, &g, 5, Some(&smote_cfg), 3).unwrap();
        assert_eq!(a.table.len(), 4);
        let b = tune(&ds, Family::Gbdt, &base, &g, 5, Some(&smote_cfg), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn excessive_learning_rate_loses() {
        let ds = planted(300, 4);
        let g = Grid::new(vec![("lr", vec![0.1, 10.0])]);
        let base = hp([("epochs", 200.0), ("hidden_units", 4.0)]);
        let r = tune(&ds, Family::ShallowNn, &base, &g, 5, None, 5).unwrap();
        assert_eq!(r.best["lr"], HpValue::Number(0.1), "{:?}", r.table);
    }

    #[test]
    fn fold_errors_carry_grid_point() {
        let ds = planted(100, 6);
        let g = Grid::new(vec![("penalty", vec!["l2", "ridge"])]);
        let err = tune(&ds, Family::Logistic, &Hyperparams::new(), &g, 5, None, 0).unwrap_err();
        assert!(err.to_string().contains("penalty=ridge"), "{err}");
        assert_eq!(err.class().exit_code(), 2);
    }
}
