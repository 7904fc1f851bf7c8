//! SMOTE minority oversampling, restricted to training rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::rng::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

/// How many synthetic rows a class pair needs to reach `ratio * majority`.
pub fn synthetic_count(minority: usize, majority: usize, ratio: f64) -> usize {
    let target = (ratio * majority as f64).ceil() as usize;
    target.saturating_sub(minority)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest rows of `rows[i]` among the other rows, ordered by
/// distance then index.
fn nearest(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(&rows[i], &rows[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Appends synthetic minority rows `x_m + delta * (x_nb - x_m)`. Only rows
/// tagged train (or every row of an untagged dataset) are read.
pub fn smote(ds: &Dataset, cfg: &SmoteConfig) -> Result<Dataset> {
    if cfg.k_neighbors == 0 {
        return Err(Error::Config("smote k_neighbors must be at least 1".into()));
    }
    if !(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "smote target_ratio {} must lie in (0, 1]",
            cfg.target_ratio
        )));
    }
    let train = ds.fit_indices();
    let pos = train.iter().filter(|&&i| ds.labels[i] == 1).count();
    let neg = train.len() - pos;
    let (minority_label, minority, majority) = if pos <= neg {
        (1u8, pos, neg)
    } else {
        (0u8, neg, pos)
    };
    let count = synthetic_count(minority, majority, cfg.target_ratio);
    let mut out = ds.clone();
    if ds.split.iter().all(|t| *t == SplitTag::None) {
        out.split = vec![SplitTag::Train; ds.n_rows()];
    }
    if count == 0 {
        return Ok(out);
    }

    let parents: Vec<Vec<f64>> = train
        .iter()
        .filter(|&&i| ds.labels[i] == minority_label && !ds.synthetic[i])
        .map(|&i| ds.row(i).to_vec())
        .collect();
    if parents.len() <= cfg.k_neighbors {
        return Err(Error::Balance {
            minority: parents.len(),
            k: cfg.k_neighbors,
        });
    }
    let neighbors: Vec<Vec<usize>> = (0..parents.len())
        .map(|i| nearest(&parents, i, cfg.k_neighbors))
        .collect();

    let mut rng = stage_rng(cfg.seed);
    let mut rows = Vec::with_capacity(count);
    for s in 0..count {
        let m = s % parents.len();
        let nb = neighbors[m][rng.random_range(0..cfg.k_neighbors)];
        let delta: f64 = rng.random();
        rows.push(
            parents[m]
                .iter()
                .zip(&parents[nb])
                .map(|(a, b)| a + delta * (b - a))
                .collect::<Vec<f64>>(),
        );
    }
    out.append_synthetic(&rows, minority_label);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imbalanced(n_min: usize, n_maj: usize, seed: u64) -> Dataset {
        let mut rng = stage_rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_min + n_maj {
            rows.push(vec![
                rng.random::<f64>(),
                rng.random::<f64>() * 3.0,
                f64::from(u8::from(rng.random::<bool>())),
            ]);
            labels.push(u8::from(i < n_min));
        }
        Dataset::from_rows(&rows, labels, &["a", "b", "flag"]).unwrap()
    }

    fn counts(ds: &Dataset) -> (usize, usize) {
        let pos = ds.positives();
        (pos, ds.n_rows() - pos)
    }

    #[test]
    fn parity_counts() {
        let ds = imbalanced(100, 300, 1);
        let out = smote(&ds, &SmoteConfig::default()).unwrap();
        assert_eq!(counts(&out), (300, 300));
        assert!(out.synthetic[400..].iter().all(|&s| s));
        assert!(out.labels[400..].iter().all(|&y| y == 1));
    }

    #[test]
    fn two_point_segment() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![2.0, 4.0],
            vec![9.0, 9.0],
            vec![8.0, 9.0],
            vec![9.0, 8.0],
            vec![7.0, 7.0],
        ];
        let ds = Dataset::from_rows(&rows, vec![1, 1, 0, 0, 0, 0], &["x", "y"]).unwrap();
        let cfg = SmoteConfig {
            k_neighbors: 1,
            ..Default::default()
        };
        let out = smote(&ds, &cfg).unwrap();
        assert_eq!(out.n_rows(), 8);
        for i in 6..8 {
            let r = out.row(i);
            let d = r[0] / 2.0;
            assert!((0.0..=1.0).contains(&d));
            assert!((r[1] - 4.0 * d).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_minority_rows() {
        let ds = imbalanced(5, 20, 2);
        assert!(matches!(
            smote(&ds, &SmoteConfig::default()),
            Err(Error::Balance { minority: 5, k: 5 })
        ));
    }

    #[test]
    fn no_op_when_ratio_already_met() {
        let ds = imbalanced(40, 60, 3);
        let cfg = SmoteConfig {
            target_ratio: 0.5,
            ..Default::default()
        };
        assert_eq!(smote(&ds, &cfg).unwrap().n_rows(), 100);
        assert_eq!(synthetic_count(40, 60, 0.5), 0);
        assert_eq!(synthetic_count(40, 101, 0.5), 11);
    }

    #[test]
    fn seeds_change_draws_not_counts() {
        let ds = imbalanced(30, 70, 4);
        let a = smote(
            &ds,
            &SmoteConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = smote(
            &ds,
            &SmoteConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let c = smote(
            &ds,
            &SmoteConfig {
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), c.n_rows());
        assert_ne!(a.matrix, c.matrix);
    }
}
