//! One-hidden-layer network: tanh hidden units, sigmoid output, full-batch
//! gradient descent on mean log-loss plus an l2 weight penalty.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fit_rows, Family, HpReader, Hyperparams, Parameters, TrainedModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::select::lasso::{sigmoid, softplus};

const KEYS: [&str; 5] = ["hidden_units", "epochs", "lr", "seed", "l2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    /// `hidden x inputs`.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub loss_trace: Vec<f64>,
}

impl NnParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w1: vec![vec![0.0; inputs]; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            loss_trace: Vec::new(),
        }
    }

    /// Uniform(-s, s) weights with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stage_rng(seed);
        let s1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let s2 = (6.0 / (hidden + 1) as f64).sqrt();
        let mut p = Self::zeros(inputs, hidden);
        for row in &mut p.w1 {
            for w in row.iter_mut() {
                *w = rng.random_range(-s1..s1);
            }
        }
        for w in &mut p.w2 {
            *w = rng.random_range(-s2..s2);
        }
        p
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| (b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).tanh())
            .collect()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.b2
            + self
                .hidden(x)
                .iter()
                .zip(&self.w2)
                .map(|(a, w)| a * w)
                .sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn weight_sq(&self) -> f64 {
        self.w1
            .iter()
            .flatten()
            .chain(&self.w2)
            .map(|w| w * w)
            .sum()
    }

    /// Flat view of all trainable values, in a fixed order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().flatten().copied().collect();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for w in self.w1.iter_mut().flatten() {
            *w = it.next().unwrap();
        }
        for b in &mut self.b1 {
            *b = it.next().unwrap();
        }
        for w in &mut self.w2 {
            *w = it.next().unwrap();
        }
        self.b2 = it.next().unwrap();
    }
}

/// Penalized mean log-loss and its gradient (same layout as the parameters).
pub fn loss_and_grad(p: &NnParams, rows: &[Vec<f64>], y: &[f64], l2: f64) -> (f64, NnParams) {
    let n = rows.len() as f64;
    let inputs = p.w1.first().map_or(0, |w| w.len());
    let mut g = NnParams::zeros(inputs, p.b1.len());
    let mut loss = 0.0;
    for (x, &t) in rows.iter().zip(y) {
        let a = p.hidden(x);
        let z = p.b2 + a.iter().zip(&p.w2).map(|(a, w)| a * w).sum::<f64>();
        loss += softplus(z) - t * z;
        let dz = (sigmoid(z) - t) / n;
        g.b2 += dz;
        for k in 0..a.len() {
            g.w2[k] += dz * a[k];
            let dpre = dz * p.w2[k] * (1.0 - a[k] * a[k]);
            g.b1[k] += dpre;
            for (gw, v) in g.w1[k].iter_mut().zip(x) {
                *gw += dpre * v;
            }
        }
    }
    for (gw, w) in g.w1.iter_mut().flatten().zip(p.w1.iter().flatten()) {
        *gw += l2 * w;
    }
    for (gw, w) in g.w2.iter_mut().zip(&p.w2) {
        *gw += l2 * w;
    }
    (loss / n + 0.5 * l2 * p.weight_sq(), g)
}

pub fn fit_shallow_nn(train: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    let r = HpReader::new(hp, Family::ShallowNn, &KEYS)?;
    let hidden = r.usize("hidden_units", 8)?;
    let epochs = r.usize("epochs", 500)?;
    let lr = r.f64("lr", 0.3)?;
    let seed = r.usize("seed", 0)? as u64;
    let l2 = r.f64("l2", 1e-4)?;
    if hidden == 0 {
        return Err(Error::Config(
            "shallow_nn hidden_units must be at least 1".into(),
        ));
    }
    if lr <= 0.0 || l2 < 0.0 {
        return Err(Error::Config("shallow_nn needs lr > 0 and l2 >= 0".into()));
    }
    let (rows, labels) = fit_rows(train);
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let mut params = NnParams::glorot(train.n_features(), hidden, seed);
    let mut trace = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (loss, g) = loss_and_grad(&params, &rows, &y, l2);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.push(loss);
        let mut flat = params.flat();
        for (w, d) in flat.iter_mut().zip(g.flat()) {
            *w -= lr * d;
        }
        params.set_flat(&flat);
    }
    let (loss, _) = loss_and_grad(&params, &rows, &y, l2);
    if !loss.is_finite() || params.flat().iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence { epoch: epochs });
    }
    trace.push(loss);
    params.loss_trace = trace;
    Ok(TrainedModel::new(
        Family::ShallowNn,
        hp.clone(),
        Parameters::ShallowNn(params),
        train,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hp, Predictor};

    #[test]
    fn zero_network_scores_half() {
        let p = NnParams::zeros(3, 4);
        assert_eq!(p.predict_row(&[1.0, -2.0, 0.5]), 0.5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = stage_rng(9);
        for trial in 0..10u64 {
            let rows: Vec<Vec<f64>> = (0..25)
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let y: Vec<f64> = (0..25)
                .map(|_| f64::from(u8::from(rng.random::<bool>())))
                .collect();
            let p = NnParams::glorot(3, 5, trial);
            let l2 = 0.01;
            let (_, g) = loss_and_grad(&p, &rows, &y, l2);
            let base = p.flat();
            let h = 1e-5;
            for (k, gk) in g.flat().into_iter().enumerate() {
                let mut up = p.clone();
                let mut dn = p.clone();
                let mut v = base.clone();
                v[k] += h;
                up.set_flat(&v);
                v[k] -= 2.0 * h;
                dn.set_flat(&v);
                let fd = (loss_and_grad(&up, &rows, &y, l2).0
                    - loss_and_grad(&dn, &rows, &y, l2).0)
                    / (2.0 * h);
                let rel = (fd - gk).abs() / gk.abs().max(1e-4);
                assert!(rel < 1e-4, "trial {trial} param {k}: {fd} vs {gk}");
            }
        }
    }

    #[test]
    fn learns_xor() {
        let mut rng = stage_rng(5);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let b: f64 = rng.random::<f64>() * 2.0 - 1.0;
            labels.push(u8::from((a > 0.0) != (b > 0.0)));
            rows.push(vec![a, b]);
        }
        let ds = Dataset::from_rows(&rows, labels, &["a", "b"]).unwrap();
        let m = fit_shallow_nn(
            &ds,
            &hp([
                ("hidden_units", 8.0),
                ("epochs", 5000.0),
                ("lr", 1.0),
                ("l2", 0.0),
            ]),
        )
        .unwrap();
        let acc = m
            .score(&ds)
            .unwrap()
            .iter()
            .zip(&ds.labels)
            .filter(|(s, &y)| u8::from(**s >= 0.5) == y)
            .count() as f64
            / 200.0;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn seeded_fits_are_reproducible() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 / 10.0).sin(), (i as f64).cos()])
            .collect();
        let labels = (0..30).map(|i| u8::from(i % 2 == 0)).collect();
        let ds = Dataset::from_rows(&rows, labels, &["a", "b"]).unwrap();
        let h = hp([("epochs", 20.0), ("seed", 3.0)]);
        assert_eq!(
            fit_shallow_nn(&ds, &h).unwrap(),
            fit_shallow_nn(&ds, &h).unwrap()
        );
        let x = [0.1, 0.2];
        assert_ne!(
            fit_shallow_nn(&ds, &hp([("epochs", 20.0), ("seed", 4.0)]))
                .unwrap()
                .predict_row(&x),
            fit_shallow_nn(&ds, &h).unwrap().predict_row(&x)
        );
    }
}
