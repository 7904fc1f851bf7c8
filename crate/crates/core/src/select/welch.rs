use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::student_t_two_sided;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub feature: String,
    pub mean_a: f64,
    pub sd_a: f64,
    pub n_a: usize,
    pub mean_b: f64,
    pub sd_b: f64,
    pub n_b: usize,
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    pub p_value: f64,
    /// Both groups have zero variance; `p_value` is 0 or 1 by convention.
    pub degenerate: bool,
}

/// Sample mean and (n - 1) standard deviation.
pub fn sample_stats(xs: &[f64]) -> (f64, f64, usize) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n as f64 - 1.0)).sqrt(), n)
}

/// Welch's unequal-variance two-sample t-test on raw samples.
pub fn welch_t(sample_a: &[f64], sample_b: &[f64]) -> Result<TTestResult> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(Error::DegenerateData(
            "each group needs at least two observations".into(),
        ));
    }
    let (ma, sa, na) = sample_stats(sample_a);
    let (mb, sb, nb) = sample_stats(sample_b);
    welch_t_summary(ma, sa, na, mb, sb, nb)
}

/// Welch's t-test from `mean (sd), n` summaries, as printed in cohort tables.
pub fn welch_t_summary(
    mean_a: f64,
    sd_a: f64,
    n_a: usize,
    mean_b: f64,
    sd_b: f64,
    n_b: usize,
) -> Result<TTestResult> {
    if n_a < 2 || n_b < 2 {
        return Err(Error::DegenerateData(
            "each group needs at least two observations".into(),
        ));
    }
    if sd_a < 0.0 || sd_b < 0.0 || !sd_a.is_finite() || !sd_b.is_finite() {
        return Err(Error::DegenerateData(
            "standard deviations must be finite and non-negative".into(),
        ));
    }
    let va = sd_a * sd_a / n_a as f64;
    let vb = sd_b * sd_b / n_b as f64;
    let se2 = va + vb;
    let diff = mean_a - mean_b;
    let (t_stat, dof, p_value, degenerate) = if se2 == 0.0 {
        let dof = (n_a + n_b - 2) as f64;
        if diff == 0.0 {
            (0.0, dof, 1.0, true)
        } else {
            (diff.signum() * f64::INFINITY, dof, 0.0, true)
        }
    } else {
        let t = diff / se2.sqrt();
        let dof = se2 * se2 / (va * va / (n_a as f64 - 1.0) + vb * vb / (n_b as f64 - 1.0));
        (t, dof, student_t_two_sided(t, dof), false)
    };
    Ok(TTestResult {
        feature: String::new(),
        mean_a,
        sd_a,
        n_a,
        mean_b,
        sd_b,
        n_b,
        t_stat,
        dof,
        p_value,
        degenerate,
    })
}

/// Per-feature Welch tests between two row groups of a dataset.
pub fn compare_groups(
    ds: &Dataset,
    group_a: &[usize],
    group_b: &[usize],
) -> Result<Vec<TTestResult>> {
    (0..ds.n_features())
        .map(|j| {
            let a: Vec<f64> = group_a
                .iter()
                .map(|&i| ds.matrix[[i, j]])
                .filter(|v| !v.is_nan())
                .collect();
            let b: Vec<f64> = group_b
                .iter()
                .map(|&i| ds.matrix[[i, j]])
                .filter(|v| !v.is_nan())
                .collect();
            let mut r = welch_t(&a, &b)?;
            r.feature = ds.meta[j].name.clone();
            Ok(r)
        })
        .collect()
}
