//! Penalized logistic regression.
//!
//! `l1` delegates to the LASSO coordinate-descent solver. `l2` and `none`
//! use damped Newton steps on `mean NLL + (strength / 2) * ||beta||^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Family, HpReader, Hyperparams, Parameters, TrainedModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::select::lasso::{mean_nll, nll_gradient, sigmoid, Design, Solver};

const KEYS: [&str; 3] = ["penalty", "strength", "max_iter"];
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
    None,
}

impl Penalty {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Penalty::L1),
            "l2" => Ok(Penalty::L2),
            "none" => Ok(Penalty::None),
            other => Err(Error::Config(format!(
                "logistic penalty `{other}` is not one of l1, l2, none"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: Penalty,
    pub strength: f64,
    pub iterations: usize,
}

impl LogisticParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let eta = self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        sigmoid(eta)
    }
}

/// Smooth part of the objective: mean NLL plus the ridge term for `l2`.
pub fn objective(
    design: &Design,
    intercept: f64,
    beta: &[f64],
    penalty: Penalty,
    strength: f64,
) -> f64 {
    let ridge = match penalty {
        Penalty::L2 => 0.5 * strength * beta.iter().map(|b| b * b).sum::<f64>(),
        _ => 0.0,
    };
    mean_nll(design, intercept, beta) + ridge
}

/// Gradient of [`objective`] as `(d/d intercept, d/d beta)`.
pub fn gradient(
    design: &Design,
    intercept: f64,
    beta: &[f64],
    penalty: Penalty,
    strength: f64,
) -> (f64, Vec<f64>) {
    let (g0, mut g) = nll_gradient(design, intercept, beta);
    if penalty == Penalty::L2 {
        for (gj, bj) in g.iter_mut().zip(beta) {
            *gj += strength * bj;
        }
    }
    (g0, g)
}

fn separates(design: &Design, intercept: f64, beta: &[f64]) -> bool {
    design
        .linear_predictor(intercept, beta)
        .iter()
        .zip(&design.y)
        .all(|(&e, &y)| if y == 1.0 { e > 0.0 } else { e < 0.0 })
}

fn newton(
    design: &Design,
    penalty: Penalty,
    strength: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>, usize)> {
    let n = design.n() as f64;
    let p = design.p();
    let y = &design.y;
    let mut b0 = y.iter().sum::<f64>() / n;
    b0 = (b0 / (1.0 - b0)).ln();
    let mut beta = vec![0.0; p];
    let not_converged = |iterations| Error::NotConverged {
        family: "logistic".into(),
        iterations,
    };
    for it in 0..max_iter {
        let (g0, g) = gradient(design, b0, &beta, penalty, strength);
        let norm = g.iter().fold(g0.abs(), |m, v| m.max(v.abs()));
        if norm < GRAD_TOL {
            return Ok((b0, beta, it));
        }
        if penalty == Penalty::None && separates(design, b0, &beta) {
            return Err(not_converged(it));
        }
        let eta = design.linear_predictor(b0, &beta);
        let w: Vec<f64> = eta
            .iter()
            .map(|&e| {
                let pr = sigmoid(e);
                pr * (1.0 - pr)
            })
            .collect();
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        h[(0, 0)] = w.iter().sum::<f64>() / n;
        for a in 0..p {
            let ca = &design.columns[a];
            let s: f64 = ca.iter().zip(&w).map(|(x, w)| x * w).sum();
            h[(0, a + 1)] = s / n;
            h[(a + 1, 0)] = s / n;
            for b in a..p {
                let cb = &design.columns[b];
                let s: f64 = ca.iter().zip(cb).zip(&w).map(|((x, z), w)| x * z * w).sum();
                h[(a + 1, b + 1)] = s / n;
                h[(b + 1, a + 1)] = s / n;
            }
            if penalty == Penalty::L2 {
                h[(a + 1, a + 1)] += strength;
            }
        }
        let rhs = DVector::from_iterator(p + 1, std::iter::once(g0).chain(g.iter().copied()));
        let Some(chol) = h.cholesky() else {
            return Err(not_converged(it));
        };
        let step = chol.solve(&rhs);
        let f0 = objective(design, b0, &beta, penalty, strength);
        let mut t = 1.0;
        loop {
            let nb0 = b0 - t * step[0];
            let nbeta: Vec<f64> = beta
                .iter()
                .enumerate()
                .map(|(j, b)| b - t * step[j + 1])
                .collect();
            let f1 = objective(design, nb0, &nbeta, penalty, strength);
            if f1 <= f0 || t < 1e-12 {
                b0 = nb0;
                beta = nbeta;
                break;
            }
            t *= 0.5;
        }
        if !b0.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(not_converged(it));
        }
    }
    Err(not_converged(max_iter))
}

pub fn fit_logistic(train: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    let r = HpReader::new(hp, Family::Logistic, &KEYS)?;
    let penalty = Penalty::parse(&r.text("penalty", "l2")?)?;
    let strength = r.f64("strength", 0.1)?;
    if strength < 0.0 {
        return Err(Error::Config(
            "logistic strength must be non-negative".into(),
        ));
    }
    let design = Design::from_dataset_rows(train, &train.fit_indices());
    let (intercept, coefficients, iterations) = match penalty {
        Penalty::L1 => {
            let mut solver = Solver::new(&design);
            let sweeps = solver.solve(strength, r.usize("max_iter", 10_000)?, 1e-7)?;
            (solver.intercept, solver.beta, sweeps)
        }
        Penalty::L2 | Penalty::None => {
            newton(&design, penalty, strength, r.usize("max_iter", 100)?)?
        }
    };
    let params = LogisticParams {
        intercept,
        coefficients,
        penalty,
        strength,
        iterations,
    };
    Ok(TrainedModel::new(
        Family::Logistic,
        hp.clone(),
        Parameters::Logistic(params),
        train,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hp, HpValue};
    use crate::rng::stage_rng;
    use rand::Rng;

    fn params(m: &TrainedModel) -> &LogisticParams {
        match &m.parameters {
            Parameters::Logistic(p) => p,
            _ => unreachable!(),
        }
    }

    fn random(n: usize, seed: u64) -> Dataset {
        let mut rng = stage_rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            labels.push(u8::from(rng.random::<f64>() < sigmoid(1.5 * r[0] - r[1])));
            rows.push(r);
        }
        Dataset::from_rows(&rows, labels, &["a", "b", "c"]).unwrap()
    }

    #[test]
    fn mirrored_data_has_zero_intercept() {
        let base = random(40, 1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..base.n_rows() {
            let r = base.row(i).to_vec();
            rows.push(r.clone());
            labels.push(base.labels[i]);
            rows.push(r.iter().map(|v| -v).collect());
            labels.push(1 - base.labels[i]);
        }
        let ds = Dataset::from_rows(&rows, labels, &["a", "b", "c"]).unwrap();
        for penalty in ["l2", "none"] {
            let m = fit_logistic(&ds, &hp([("penalty", penalty)])).unwrap();
            assert!(params(&m).intercept.abs() < 1e-6, "{penalty}");
        }
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let ds = random(100, 2);
        let mut last = f64::INFINITY;
        for s in [0.1, 10.0, 1e3, 1e6] {
            let m = fit_logistic(
                &ds,
                &hp([
                    ("penalty", HpValue::from("l2")),
                    ("strength", HpValue::from(s)),
                ]),
            )
            .unwrap();
            let norm = params(&m)
                .coefficients
                .iter()
                .fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(norm < last);
            last = norm;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ds = random(60, 3);
        let design = Design::from_dataset_rows(&ds, &ds.fit_indices());
        let mut rng = stage_rng(30);
        let h = 1e-6;
        for _ in 0..10 {
            let b0: f64 = rng.random::<f64>() - 0.5;
            let beta: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let (g0, g) = gradient(&design, b0, &beta, Penalty::L2, 0.3);
            let f = |b0: f64, beta: &[f64]| objective(&design, b0, beta, Penalty::L2, 0.3);
            let fd0 = (f(b0 + h, &beta) - f(b0 - h, &beta)) / (2.0 * h);
            assert!((fd0 - g0).abs() / g0.abs().max(1e-3) < 1e-5);
            for j in 0..3 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (f(b0, &up) - f(b0, &dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() / g[j].abs().max(1e-3) < 1e-5);
            }
        }
    }

    #[test]
    fn separable_unpenalized_fit_fails() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let labels = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        let ds = Dataset::from_rows(&rows, labels, &["x"]).unwrap();
        let err = fit_logistic(&ds, &hp([("penalty", "none")])).unwrap_err();
        assert!(matches!(err, Error::NotConverged { .. }));
        assert!(err.to_string().contains("regularization"));
        assert!(fit_logistic(&ds, &hp([("penalty", "l2")])).is_ok());
    }

    #[test]
    fn l1_zeroes_weak_coefficients() {
        let ds = random(300, 4);
        let m = fit_logistic(
            &ds,
            &hp([
                ("penalty", HpValue::from("l1")),
                ("strength", HpValue::from(0.05)),
            ]),
        )
        .unwrap();
        let p = params(&m);
        assert!(p.coefficients[0] > 0.0);
        assert!(p.coefficients.contains(&0.0));
    }
}
