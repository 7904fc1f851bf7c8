//! Exact Shapley values by enumerating every coalition.
//!
//! The value of a coalition `S` is the mean model output over background
//! rows `b`, evaluated at the record with every feature outside `S` replaced
//! by `b`'s value. With `n` features this costs `2^n * |background|` model
//! calls, which is why `n` is capped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{stratified_split, Predictor};
use crate::rng::derive_seed;

pub const DEFAULT_MAX_FEATURES: usize = 20;
pub const DEFAULT_BACKGROUND_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub record_index: usize,
    pub row_id: String,
    pub base_value: f64,
    pub attributions: Vec<f64>,
    pub prediction: f64,
}

/// `w(s) = s! (n - s - 1)! / n!` for coalition sizes `s = 0..n`.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    // 1 / (n * C(n - 1, s)), with the binomial built up multiplicatively.
    let mut w = Vec::with_capacity(n);
    let mut binom = 1.0f64;
    for s in 0..n {
        w.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    w
}

/// `v(S)` for every coalition bitmask, in mask order.
pub fn coalition_values<P: Predictor + ?Sized>(
    model: &P,
    record: &[f64],
    background: &[Vec<f64>],
) -> Vec<f64> {
    let n = record.len();
    (0..1usize << n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |z, mask| {
                let mut total = 0.0;
                for b in background {
                    for j in 0..n {
                        z[j] = if mask >> j & 1 == 1 { record[j] } else { b[j] };
                    }
                    total += model.predict_row(z);
                }
                total / background.len() as f64
            },
        )
        .collect()
}

pub fn shapley_exact<P: Predictor + ?Sized>(
    model: &P,
    record: &[f64],
    background: &[Vec<f64>],
    max_features: usize,
) -> Result<ShapExplanation> {
    let n = record.len();
    if n > max_features {
        return Err(Error::Capacity {
            features: n,
            max: max_features,
        });
    }
    if n != model.n_features() {
        return Err(Error::Scoring(format!(
            "record has {n} features, model expects {}",
            model.n_features()
        )));
    }
    if background.is_empty() {
        return Err(Error::DegenerateData("Shapley background is empty".into()));
    }
    let v = coalition_values(model, record, background);
    let w = shapley_weights(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..v.len() {
            if mask & bit == 0 {
                *p += w[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
            }
        }
    }
    Ok(ShapExplanation {
        record_index: 0,
        row_id: String::new(),
        base_value: v[0],
        attributions: phi,
        prediction: model.predict_row(record),
    })
}

/// Caps the background at `cap` rows, keeping class proportions.
pub fn background_sample(ds: &Dataset, cap: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = if ds.n_rows() <= cap {
        (0..ds.n_rows()).collect()
    } else {
        let ratio = cap as f64 / ds.n_rows() as f64;
        stratified_split(&ds.labels, ratio, derive_seed(seed, "shap-background", 0))?.train_indices
    };
    Ok(idx.iter().map(|&i| ds.row(i).to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapBatch {
    pub feature_names: Vec<String>,
    pub explanations: Vec<ShapExplanation>,
    /// Features by descending mean `|phi|`, ties in column order.
    pub ranking: Vec<Importance>,
    /// Feature values of the explained rows, for summary plots.
    pub values: Vec<Vec<f64>>,
}

impl ShapBatch {
    /// Long format: one line per (row, feature).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,feature,value,phi\n");
        for (e, vals) in self.explanations.iter().zip(&self.values) {
            for ((name, v), phi) in self.feature_names.iter().zip(vals).zip(&e.attributions) {
                out.push_str(&format!("{},{},{},{}\n", e.row_id, name, v, phi));
            }
        }
        out
    }
}

pub fn shapley_batch<P: Predictor + ?Sized>(
    model: &P,
    rows: &Dataset,
    background: &Dataset,
    max_features: usize,
    background_cap: usize,
    seed: u64,
) -> Result<ShapBatch> {
    let bg = background_sample(background, background_cap, seed)?;
    let mut explanations = Vec::with_capacity(rows.n_rows());
    let mut values = Vec::with_capacity(rows.n_rows());
    for i in 0..rows.n_rows() {
        let x = rows.row(i).to_vec();
        let mut e = shapley_exact(model, &x, &bg, max_features)?;
        e.record_index = i;
        e.row_id = rows.row_ids[i].clone();
        explanations.push(e);
        values.push(x);
    }
    let names = rows.feature_names();
    let k = explanations.len().max(1) as f64;
    let mut ranking: Vec<Importance> = names
        .iter()
        .enumerate()
        .map(|(j, name)| Importance {
            feature: name.clone(),
            mean_abs_phi: explanations
                .iter()
                .map(|e| e.attributions[j].abs())
                .sum::<f64>()
                / k,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    Ok(ShapBatch {
        feature_names: names,
        explanations,
        ranking,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gbdt::{GbdtParams, Node, Tree};
    use crate::rng::stage_rng;
    use rand::Rng;

    struct Linear(Vec<f64>);

    impl Predictor for Linear {
        fn n_features(&self) -> usize {
            self.0.len()
        }
        fn predict_row(&self, x: &[f64]) -> f64 {
            self.0.iter().zip(x).map(|(w, v)| w * v).sum()
        }
    }

    struct RawTree(GbdtParams);

    impl Predictor for RawTree {
        fn n_features(&self) -> usize {
            3
        }
        fn predict_row(&self, x: &[f64]) -> f64 {
            self.0.raw_score(x)
        }
    }

    fn node(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
        Node {
            feature,
            threshold,
            left,
            right,
            value: 0.0,
        }
    }

    fn leaf(value: f64) -> Node {
        Node {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    fn depth_two_tree() -> RawTree {
        let nodes = vec![
            node(0, 0.5, 1, 2),
            node(1, 0.0, 3, 4),
            node(2, 1.0, 5, 6),
            leaf(1.0),
            leaf(-2.0),
            leaf(0.5),
            leaf(3.0),
        ];
        RawTree(GbdtParams {
            init_score: 0.1,
            trees: vec![Tree { nodes }],
            loss_trace: vec![],
        })
    }

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }

    /// Rebuilds every coalition value from scratch for each term.
    fn brute_force(model: &dyn Predictor, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
        let n = x.len();
        let value = |members: &[usize]| -> f64 {
            let mut outputs = Vec::new();
            for b in bg {
                let z: Vec<f64> = (0..n)
                    .map(|j| if members.contains(&j) { x[j] } else { b[j] })
                    .collect();
                outputs.push(model.predict_row(&z));
            }
            outputs.iter().sum::<f64>() / outputs.len() as f64
        };
        (0..n)
            .map(|i| {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let mut phi = 0.0;
                for pick in 0..(1usize << others.len()) {
                    let s: Vec<usize> = others
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| pick >> k & 1 == 1)
                        .map(|(_, &j)| j)
                        .collect();
                    let mut with = s.clone();
                    with.push(i);
                    let weight = factorial(s.len()) * factorial(n - s.len() - 1) / factorial(n);
                    phi += weight * (value(&with) - value(&s));
                }
                phi
            })
            .collect()
    }

    #[test]
    fn weights_match_factorials() {
        for n in 1..=12 {
            for (s, w) in shapley_weights(n).iter().enumerate() {
                let want = factorial(s) * factorial(n - s - 1) / factorial(n);
                assert!((w - want).abs() <= 1e-15 * want.max(1.0));
            }
        }
    }

    #[test]
    fn tree_matches_brute_force() {
        let model = depth_two_tree();
        let bg = vec![
            vec![0.0, -1.0, 0.0],
            vec![1.0, 1.0, 2.0],
            vec![0.2, 0.5, 1.5],
            vec![0.9, -0.3, 0.7],
        ];
        for x in [[0.3, 0.2, 2.0], [0.7, -1.0, 0.5], [0.5, 0.0, 1.0]] {
            let e = shapley_exact(&model, &x, &bg, 20).unwrap();
            let oracle = brute_force(&model, &x, &bg);
            for (a, b) in e.attributions.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let total: f64 = e.base_value + e.attributions.iter().sum::<f64>();
            assert!((total - e.prediction).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_closed_form_and_dummy() {
        let w = vec![1.5, -2.0, 0.0, 0.7];
        let model = Linear(w.clone());
        let mut rng = stage_rng(4);
        let bg: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let x = [0.9, 0.1, 0.4, 0.3];
        let e = shapley_exact(&model, &x, &bg, 20).unwrap();
        for j in 0..4 {
            let mean = bg.iter().map(|b| b[j]).sum::<f64>() / 64.0;
            assert!((e.attributions[j] - w[j] * (x[j] - mean)).abs() < 1e-6);
        }
        assert_eq!(e.attributions[2], 0.0);
    }

    #[test]
    fn duplicated_features_share_equally() {
        let model = Linear(vec![1.0, 1.0, 0.5]);
        let bg = vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![0.4, 0.4, 0.2],
        ];
        let e = shapley_exact(&model, &[2.0, 2.0, 1.0], &bg, 20).unwrap();
        assert!((e.attributions[0] - e.attributions[1]).abs() < 1e-9);
    }

    #[test]
    fn capacity_limit() {
        let model = Linear(vec![1.0; 5]);
        let err = shapley_exact(&model, &[0.0; 5], &[vec![0.0; 5]], 4).unwrap_err();
        assert!(matches!(
            err,
            Error::Capacity {
                features: 5,
                max: 4
            }
        ));
    }

    #[test]
    fn column_reordering_permutes_attributions() {
        let model = depth_two_tree();
        let bg = vec![
            vec![0.0, -1.0, 0.0],
            vec![1.0, 1.0, 2.0],
            vec![0.2, 0.5, 1.5],
        ];
        let x = [0.3, 0.2, 2.0];
        let e = shapley_exact(&model, &x, &bg, 20).unwrap();
        // Same tree with features relabelled 0->2, 1->0, 2->1.
        let mut moved = depth_two_tree();
        for n in &mut moved.0.trees[0].nodes {
            if !n.is_leaf() {
                n.feature = [2, 0, 1][n.feature];
            }
        }
        let perm = |v: &[f64]| vec![v[1], v[2], v[0]];
        let bg2: Vec<Vec<f64>> = bg.iter().map(|b| perm(b)).collect();
        let e2 = shapley_exact(&moved, &perm(&x), &bg2, 20).unwrap();
        assert_eq!(perm(&e.attributions), e2.attributions);
    }

    #[test]
    fn stratified_background_cap() {
        let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64]).collect();
        let labels = (0..1000).map(|i| u8::from(i % 4 == 0)).collect();
        let ds = Dataset::from_rows(&rows, labels, &["x"]).unwrap();
        let bg = background_sample(&ds, 256, 1).unwrap();
        assert_eq!(bg.len(), 256);
        let pos = bg
            .iter()
            .filter(|r| (r[0] as usize).is_multiple_of(4))
            .count();
        assert_eq!(pos, 64);
    }
}
