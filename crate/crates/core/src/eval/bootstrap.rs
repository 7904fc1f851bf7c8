//! Percentile bootstrap interval for AUROC.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::auroc;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stage_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Single-class resamples that were discarded and redrawn.
    pub redraws: usize,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate `r` draws from its own derived stream, so the interval does not
/// depend on how replicates are scheduled.
pub fn bootstrap_auroc_ci(
    scores: &[f64],
    labels: &[u8],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if replicates < 100 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 100 replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    auroc(scores, labels)?;
    let n = scores.len();
    let cap = 10 * replicates;
    let draws: Vec<(f64, usize)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stage_rng(derive_seed(seed, "bootstrap", r as u64));
            let mut s = vec![0.0; n];
            let mut y = vec![0u8; n];
            let mut redraws = 0;
            loop {
                for k in 0..n {
                    let i = rng.random_range(0..n);
                    s[k] = scores[i];
                    y[k] = labels[i];
                }
                let pos = y.iter().filter(|&&v| v == 1).count();
                if pos > 0 && pos < n {
                    return Ok((auroc(&s, &y)?, redraws));
                }
                redraws += 1;
                if redraws > cap {
                    return Err(Error::DegenerateData(format!(
                        "bootstrap redrew more than {cap} single-class resamples"
                    )));
                }
            }
        })
        .collect::<Result<_>>()?;
    let redraws: usize = draws.iter().map(|d| d.1).sum();
    if redraws > cap {
        return Err(Error::DegenerateData(format!(
            "bootstrap redrew {redraws} single-class resamples, above the cap of {cap}"
        )));
    }
    let mut aucs: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    aucs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        low: quantile_sorted(&aucs, tail),
        high: quantile_sorted(&aucs, 1.0 - tail),
        replicates,
        level,
        seed,
        redraws,
    })
}
