//! Histogram gradient boosting for binary log-loss.
//!
//! Features are bucketed once into equal-frequency bins computed from the
//! training rows. Each round grows one tree leaf-wise: the leaf whose best
//! split has the largest second-order gain is split next, until `max_leaves`
//! leaves exist or no split improves the objective. Leaf values are damped
//! Newton steps `-G / (H + l2_leaf_reg)` scaled by the learning rate.

use serde::{Deserialize, Serialize};

use super::{fit_rows, Family, HpReader, Hyperparams, Parameters, TrainedModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::select::lasso::{sigmoid, softplus};

const KEYS: [&str; 6] = [
    "n_trees",
    "learning_rate",
    "max_leaves",
    "min_samples_leaf",
    "n_bins",
    "l2_leaf_reg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
    pub l2_leaf_reg: f64,
}

impl GbdtConfig {
    pub fn from_hp(hp: &Hyperparams) -> Result<Self> {
        let r = HpReader::new(hp, Family::Gbdt, &KEYS)?;
        let cfg = Self {
            n_trees: r.usize("n_trees", 100)?,
            learning_rate: r.f64("learning_rate", 0.1)?,
            max_leaves: r.usize("max_leaves", 31)?,
            min_samples_leaf: r.usize("min_samples_leaf", 20)?,
            n_bins: r.usize("n_bins", 64)?,
            l2_leaf_reg: r.f64("l2_leaf_reg", 1.0)?,
        };
        if cfg.learning_rate <= 0.0 {
            return Err(Error::Config("gbdt learning_rate must be positive".into()));
        }
        if cfg.max_leaves < 2 {
            return Err(Error::Config("gbdt max_leaves must be at least 2".into()));
        }
        if !(2..=256).contains(&cfg.n_bins) {
            return Err(Error::Config("gbdt n_bins must lie in [2, 256]".into()));
        }
        if cfg.l2_leaf_reg < 0.0 {
            return Err(Error::Config(
                "gbdt l2_leaf_reg must be non-negative".into(),
            ));
        }
        Ok(Self {
            min_samples_leaf: cfg.min_samples_leaf.max(1),
            ..cfg
        })
    }
}

/// A node of a flattened binary tree. Leaves have `left == right == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            if n.is_leaf() {
                return n.value;
            }
            k = if x[n.feature] <= n.threshold {
                n.left
            } else {
                n.right
            };
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub init_score: f64,
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first round and after each round.
    pub loss_trace: Vec<f64>,
}

impl GbdtParams {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.init_score + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }

    /// Indices of features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.feature))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Equal-frequency upper bin edges, de-duplicated, excluding the maximum
/// (a split there would leave the right side empty).
pub fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let max = sorted[n - 1];
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|k| sorted[(k * n).div_ceil(n_bins).max(1) - 1])
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

fn bin_of(edges: &[f64], x: f64) -> u8 {
    edges.partition_point(|e| *e < x) as u8
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: u32,
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    g: f64,
    h: f64,
    hist: Vec<Bin>,
    best: Option<Split>,
}

struct Grower<'a> {
    cfg: &'a GbdtConfig,
    n: usize,
    binned: &'a [u8],
    offsets: &'a [usize],
    edges: &'a [Vec<f64>],
}

impl Grower<'_> {
    fn build_hist(&self, rows: &[u32], grad: &[f64], hess: &[f64]) -> Vec<Bin> {
        let mut hist = vec![Bin::default(); *self.offsets.last().unwrap()];
        for j in 0..self.edges.len() {
            let col = &self.binned[j * self.n..(j + 1) * self.n];
            let base = self.offsets[j];
            for &r in rows {
                let r = r as usize;
                let b = &mut hist[base + col[r] as usize];
                b.g += grad[r];
                b.h += hess[r];
                b.n += 1;
            }
        }
        hist
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let d = h + self.cfg.l2_leaf_reg;
        if d > 0.0 {
            g * g / d
        } else {
            0.0
        }
    }

    fn best_split(&self, leaf: &Leaf) -> Option<Split> {
        let n_leaf = leaf.rows.len() as u32;
        let msl = self.cfg.min_samples_leaf as u32;
        if n_leaf < 2 * msl {
            return None;
        }
        let parent = self.score(leaf.g, leaf.h);
        let mut best: Option<Split> = None;
        for j in 0..self.edges.len() {
            let bins = &leaf.hist[self.offsets[j]..self.offsets[j + 1]];
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for (b, bin) in bins.iter().enumerate().take(bins.len().saturating_sub(1)) {
                gl += bin.g;
                hl += bin.h;
                nl += bin.n;
                if nl < msl {
                    continue;
                }
                if n_leaf - nl < msl {
                    break;
                }
                let gain = self.score(gl, hl) + self.score(leaf.g - gl, leaf.h - hl) - parent;
                if gain > 1e-12 && best.is_none_or(|s| gain > s.gain) {
                    best = Some(Split {
                        gain,
                        feature: j,
                        bin: b,
                    });
                }
            }
        }
        best
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let d = h + self.cfg.l2_leaf_reg;
        if d > 0.0 {
            -self.cfg.learning_rate * g / d
        } else {
            0.0
        }
    }

    /// Grows one tree and adds its output to `raw`.
    fn grow(&self, grad: &[f64], hess: &[f64], raw: &mut [f64]) -> Tree {
        let rows: Vec<u32> = (0..self.n as u32).collect();
        let hist = self.build_hist(&rows, grad, hess);
        let mut root = Leaf {
            node: 0,
            g: grad.iter().sum(),
            h: hess.iter().sum(),
            rows,
            hist,
            best: None,
        };
        root.best = self.best_split(&root);
        let mut nodes = vec![Node::leaf(0.0)];
        let mut leaves = vec![root];

        while leaves.len() < self.cfg.max_leaves {
            let mut pick: Option<usize> = None;
            for (k, leaf) in leaves.iter().enumerate() {
                if let Some(s) = leaf.best {
                    if pick.is_none_or(|p| s.gain > leaves[p].best.unwrap().gain) {
                        pick = Some(k);
                    }
                }
            }
            let Some(k) = pick else { break };
            let parent = leaves.swap_remove(k);
            let split = parent.best.unwrap();
            let col = &self.binned[split.feature * self.n..(split.feature + 1) * self.n];
            let (lrows, rrows): (Vec<u32>, Vec<u32>) = parent
                .rows
                .iter()
                .partition(|&&r| col[r as usize] as usize <= split.bin);

            let small_is_left = lrows.len() <= rrows.len();
            let small_hist =
                self.build_hist(if small_is_left { &lrows } else { &rrows }, grad, hess);
            let large_hist: Vec<Bin> = parent
                .hist
                .iter()
                .zip(&small_hist)
                .map(|(p, s)| Bin {
                    g: p.g - s.g,
                    h: p.h - s.h,
                    n: p.n - s.n,
                })
                .collect();
            let (lhist, rhist) = if small_is_left {
                (small_hist, large_hist)
            } else {
                (large_hist, small_hist)
            };

            let left_id = nodes.len();
            nodes.push(Node::leaf(0.0));
            nodes.push(Node::leaf(0.0));
            nodes[parent.node] = Node {
                feature: split.feature,
                threshold: self.edges[split.feature][split.bin],
                left: left_id,
                right: left_id + 1,
                value: 0.0,
            };
            for (node, rows, hist) in [(left_id, lrows, lhist), (left_id + 1, rrows, rhist)] {
                let g = rows.iter().map(|&r| grad[r as usize]).sum();
                let h = rows.iter().map(|&r| hess[r as usize]).sum();
                let mut child = Leaf {
                    node,
                    rows,
                    g,
                    h,
                    hist,
                    best: None,
                };
                child.best = self.best_split(&child);
                leaves.push(child);
            }
        }

        for leaf in &leaves {
            let v = self.leaf_value(leaf.g, leaf.h);
            nodes[leaf.node].value = v;
            for &r in &leaf.rows {
                raw[r as usize] += v;
            }
        }
        Tree { nodes }
    }
}

fn mean_log_loss(raw: &[f64], y: &[f64]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&z, &t)| softplus(z) - t * z)
        .sum::<f64>()
        / raw.len() as f64
}

pub fn fit_gbdt(train: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    let cfg = GbdtConfig::from_hp(hp)?;
    let (rows, labels) = fit_rows(train);
    let n = rows.len();
    let p = train.n_features();
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let prevalence = y.iter().sum::<f64>() / n as f64;
    if prevalence == 0.0 || prevalence == 1.0 {
        return Err(Error::DegenerateData("gbdt needs both classes".into()));
    }

    let edges: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            quantile_edges(&col, cfg.n_bins)
        })
        .collect();
    let mut binned = vec![0u8; n * p];
    for j in 0..p {
        for (i, r) in rows.iter().enumerate() {
            binned[j * n + i] = bin_of(&edges[j], r[j]);
        }
    }
    let mut offsets = vec![0usize];
    for e in &edges {
        offsets.push(offsets.last().unwrap() + e.len() + 1);
    }

    let init_score = (prevalence / (1.0 - prevalence)).ln();
    let mut raw = vec![init_score; n];
    let mut loss_trace = vec![mean_log_loss(&raw, &y)];
    let grower = Grower {
        cfg: &cfg,
        n,
        binned: &binned,
        offsets: &offsets,
        edges: &edges,
    };
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let pr = sigmoid(raw[i]);
            grad[i] = pr - y[i];
            hess[i] = pr * (1.0 - pr);
        }
        trees.push(grower.grow(&grad, &hess, &mut raw));
        loss_trace.push(mean_log_loss(&raw, &y));
    }

    let params = GbdtParams {
        init_score,
        trees,
        loss_trace,
    };
    Ok(TrainedModel::new(
        Family::Gbdt,
        hp.clone(),
        Parameters::Gbdt(params),
        train,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc::auroc;
    use crate::models::{hp, Predictor};
    use crate::rng::stage_rng;
    use rand::Rng;

    fn params(m: &TrainedModel) -> &GbdtParams {
        match &m.parameters {
            Parameters::Gbdt(p) => p,
            _ => unreachable!(),
        }
    }

    fn noisy(n: usize, seed: u64) -> Dataset {
        let mut rng = stage_rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let z = 2.0 * r[0] - r[1] * r[2] * 3.0;
            labels.push(u8::from(rng.random::<f64>() < sigmoid(z)));
            rows.push(r);
        }
        Dataset::from_rows(&rows, labels, &["a", "b", "c", "d"]).unwrap()
    }

    #[test]
    fn zero_trees_score_prevalence() {
        let ds = noisy(100, 1);
        let m = fit_gbdt(&ds, &hp([("n_trees", 0.0)])).unwrap();
        let prev = ds.positives() as f64 / 100.0;
        for s in m.score(&ds).unwrap() {
            assert!((s - prev).abs() < 1e-12);
        }
    }

    #[test]
    fn single_split_separates_one_dimension() {
        let rows: Vec<Vec<f64>> = (-5..=5)
            .filter(|&v| v != 0)
            .map(|v| vec![v as f64])
            .collect();
        let labels = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        let ds = Dataset::from_rows(&rows, labels, &["x"]).unwrap();
        let m = fit_gbdt(
            &ds,
            &hp([
                ("n_trees", 1.0),
                ("max_leaves", 2.0),
                ("min_samples_leaf", 1.0),
            ]),
        )
        .unwrap();
        let p = params(&m);
        assert_eq!(p.trees[0].n_leaves(), 2);
        assert_eq!(p.trees[0].nodes[0].threshold, -1.0);
        assert_eq!(auroc(&m.score(&ds).unwrap(), &ds.labels).unwrap(), 1.0);
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        for lr in [0.1, 0.3] {
            let ds = noisy(300, 2);
            let m = fit_gbdt(&ds, &hp([("n_trees", 50.0), ("learning_rate", lr)])).unwrap();
            let trace = &params(&m).loss_trace;
            assert_eq!(trace.len(), 51);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "lr={lr}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn leaf_cap_and_min_samples() {
        let ds = noisy(400, 3);
        let m = fit_gbdt(
            &ds,
            &hp([
                ("n_trees", 5.0),
                ("max_leaves", 7.0),
                ("min_samples_leaf", 30.0),
            ]),
        )
        .unwrap();
        for t in &params(&m).trees {
            assert!(t.n_leaves() <= 7);
        }
        let (rows, _) = fit_rows(&ds);
        for t in &params(&m).trees {
            let mut counts = std::collections::BTreeMap::new();
            for r in &rows {
                let mut k = 0;
                while !t.nodes[k].is_leaf() {
                    let n = &t.nodes[k];
                    k = if r[n.feature] <= n.threshold {
                        n.left
                    } else {
                        n.right
                    };
                }
                *counts.entry(k).or_insert(0) += 1;
            }
            assert!(counts.values().all(|&c| c >= 30));
        }
    }

    #[test]
    fn edges_are_quantiles() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(quantile_edges(&v, 4), vec![2.0, 4.0, 6.0]);
        assert_eq!(quantile_edges(&[1.0, 1.0, 1.0], 4), Vec::<f64>::new());
        assert_eq!(quantile_edges(&[3.0, 1.0, 2.0], 64), vec![1.0, 2.0]);
    }

    #[test]
    fn fits_are_deterministic() {
        let ds = noisy(200, 4);
        let a = fit_gbdt(&ds, &hp([("n_trees", 10.0)])).unwrap();
        let b = fit_gbdt(&ds, &hp([("n_trees", 10.0)])).unwrap();
        assert_eq!(a, b);
        let x = [0.2, -0.3, 0.5, 0.1];
        assert_eq!(a.predict_row(&x), b.predict_row(&x));
    }
}
