//! Stratified train/test splitting and k-fold assignment.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

fn class_members(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut members = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        members[usize::from(y == 1)].push(i);
    }
    members
}

/// Per-class train quotas: floors of `n_c * ratio`, with the leftover slots
/// handed to the classes with the largest fractional parts.
fn largest_remainder(sizes: [usize; 2], ratio: f64) -> [usize; 2] {
    let total = ((sizes[0] + sizes[1]) as f64 * ratio).round() as usize;
    let exact = [sizes[0] as f64 * ratio, sizes[1] as f64 * ratio];
    let mut quota = [exact[0].floor() as usize, exact[1].floor() as usize];
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(quota[0] + quota[1]);
    for &c in order.iter().cycle().take(2) {
        if left == 0 {
            break;
        }
        if quota[c] < sizes[c] {
            quota[c] += 1;
            left -= 1;
        }
    }
    quota
}

pub fn stratified_split(labels: &[u8], ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!(
            "ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let mut members = class_members(labels);
    for (c, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} has {} member(s); at least 2 are needed",
                m.len()
            )));
        }
    }
    let quota = largest_remainder([members[0].len(), members[1].len()], ratio);
    let mut rng = stage_rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..quota[c]]);
        test.extend_from_slice(&m[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train_indices: train,
        test_indices: test,
        seed,
        ratio,
    })
}

/// Shuffles each class, then deals its members round-robin across folds,
/// continuing the rotation from where the previous class stopped so fold
/// sizes stay within one of each other.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 {
        return Err(Error::Split(format!("k = {k}; need at least 2 folds")));
    }
    let mut members = class_members(labels);
    for (c, m) in members.iter().enumerate() {
        if m.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} member(s), fewer than the {k} folds requested",
                m.len()
            )));
        }
    }
    let mut rng = stage_rng(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0usize;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| fold_of[i] == f);
            SplitSpec {
                train_indices: train,
                test_indices: test,
                seed,
                ratio: 1.0 - 1.0 / k as f64,
            }
        })
        .collect())
}
