//! First-order accumulated local effects on quantile bins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Predictor;

pub const DEFAULT_ALE_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature: String,
    /// Strictly increasing; `bin_edges.len() == bin_counts.len() + 1`.
    pub bin_edges: Vec<f64>,
    /// Effect at each edge.
    pub centered_effects: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

impl AleCurve {
    /// Count-weighted mean of the curve, each bin represented by the
    /// midpoint of its two boundary values. Zero after centering.
    pub fn weighted_mean(&self) -> f64 {
        weighted_mean(&self.centered_effects, &self.bin_counts)
    }

    /// `count` on each line is the size of the bin ending at `edge`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge,effect,count\n");
        for (k, (e, v)) in self
            .bin_edges
            .iter()
            .zip(&self.centered_effects)
            .enumerate()
        {
            let count = if k == 0 { 0 } else { self.bin_counts[k - 1] };
            out.push_str(&format!("{e},{v},{count}\n"));
        }
        out
    }
}

fn weighted_mean(g: &[f64], counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let s: f64 = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * (g[k] + g[k + 1]) / 2.0)
        .sum();
    s / n as f64
}

/// Order-statistic quantiles at `k / n_bins`, duplicates merged.
pub fn ale_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(n_bins + 1);
    for k in 0..=n_bins {
        let rank = (k * n).div_ceil(n_bins).max(1);
        let v = sorted[rank - 1];
        if edges.last() != Some(&v) {
            edges.push(v);
        }
    }
    edges
}

/// Bin of `x`: `(e[k-1], e[k]]`, with the minimum in the first bin.
fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x).clamp(1, edges.len() - 1) - 1
}

pub fn ale_curve<P: Predictor + ?Sized>(
    model: &P,
    ds: &Dataset,
    feature: usize,
    n_bins: usize,
) -> Result<AleCurve> {
    if n_bins == 0 {
        return Err(Error::Config("ALE needs at least one bin".into()));
    }
    if feature >= ds.n_features() {
        return Err(Error::Config(format!(
            "feature index {feature} out of range"
        )));
    }
    let name = ds.meta[feature].name.clone();
    let column: Vec<f64> = (0..ds.n_rows()).map(|i| ds.matrix[[i, feature]]).collect();
    if column.iter().any(|v| v.is_nan()) {
        return Err(Error::Scoring(format!("feature {name} has missing values")));
    }
    let edges = if column.is_empty() {
        Vec::new()
    } else {
        ale_edges(&column, n_bins)
    };
    if edges.len() < 2 {
        return Err(Error::DegenerateFeature(name));
    }
    let n_b = edges.len() - 1;
    let diffs: Vec<(usize, f64)> = (0..ds.n_rows())
        .into_par_iter()
        .map(|i| {
            let k = bin_index(&edges, column[i]);
            let mut z = ds.row(i).to_vec();
            z[feature] = edges[k + 1];
            let hi = model.predict_row(&z);
            z[feature] = edges[k];
            (k, hi - model.predict_row(&z))
        })
        .collect();
    let mut sums = vec![0.0; n_b];
    let mut counts = vec![0usize; n_b];
    for (k, d) in diffs {
        sums[k] += d;
        counts[k] += 1;
    }
    let mut g = vec![0.0; n_b + 1];
    for k in 0..n_b {
        let local = if counts[k] > 0 {
            sums[k] / counts[k] as f64
        } else {
            0.0
        };
        g[k + 1] = g[k] + local;
    }
    let c = weighted_mean(&g, &counts);
    let centered_effects = g.iter().map(|v| v - c).collect();
    Ok(AleCurve {
        feature: name,
        bin_edges: edges,
        centered_effects,
        bin_counts: counts,
    })
}
