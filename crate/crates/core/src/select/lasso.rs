//! L1-penalized logistic regression by cyclic coordinate descent.
//!
//! The objective is the mean negative log-likelihood plus `lambda * ||beta||_1`
//! with an unpenalized intercept. Outer iterations replace the likelihood by
//! its second-order expansion at the current fit (weights `p(1 - p)`);
//! coordinate sweeps minimize that penalized weighted least-squares problem
//! with exact soft-thresholds, and a backtracking step keeps the true
//! objective non-increasing. Columns are used as given: callers standardize
//! beforehand.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::split::stratified_kfold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            folds: 5,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub intercept: f64,
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub selected: Vec<String>,
    pub cv_curve: Vec<CvPoint>,
}

/// Column-major copy of the design, the layout coordinate descent wants.
#[derive(Debug, Clone)]
pub struct Design {
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(x: &Array2<f64>, y: &[u8]) -> Self {
        let columns = (0..x.ncols()).map(|j| x.column(j).to_vec()).collect();
        Self {
            columns,
            y: y.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn from_dataset_rows(ds: &Dataset, rows: &[usize]) -> Self {
        let columns = (0..ds.n_features())
            .map(|j| rows.iter().map(|&i| ds.matrix[[i, j]]).collect())
            .collect();
        Self {
            columns,
            y: rows.iter().map(|&i| ds.labels[i] as f64).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn linear_predictor(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept; self.n()];
        for (col, &b) in self.columns.iter().zip(beta) {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
        }
        eta
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood of a logistic model.
pub fn mean_nll(design: &Design, intercept: f64, beta: &[f64]) -> f64 {
    let eta = design.linear_predictor(intercept, beta);
    eta.iter()
        .zip(&design.y)
        .map(|(&e, &y)| softplus(e) - y * e)
        .sum::<f64>()
        / design.n() as f64
}

/// Gradient of [`mean_nll`]: `(d/d intercept, d/d beta)`.
pub fn nll_gradient(design: &Design, intercept: f64, beta: &[f64]) -> (f64, Vec<f64>) {
    let n = design.n() as f64;
    let eta = design.linear_predictor(intercept, beta);
    let resid: Vec<f64> = eta
        .iter()
        .zip(&design.y)
        .map(|(&e, &y)| sigmoid(e) - y)
        .collect();
    let g0 = resid.iter().sum::<f64>() / n;
    let g = design
        .columns
        .iter()
        .map(|col| col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n)
        .collect();
    (g0, g)
}

/// Largest KKT violation of a candidate solution at `lambda`.
pub fn kkt_residual(design: &Design, intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let (g0, g) = nll_gradient(design, intercept, beta);
    g.iter()
        .zip(beta)
        .map(|(&gj, &bj)| {
            if bj == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj + lambda * bj.signum()).abs()
            }
        })
        .fold(g0.abs(), f64::max)
}

fn log_odds(design: &Design) -> f64 {
    let p = design.y.iter().sum::<f64>() / design.n() as f64;
    (p / (1.0 - p)).ln()
}

/// Smallest penalty at which every coefficient is exactly zero.
pub fn lambda_max(design: &Design) -> f64 {
    let (_, g) = nll_gradient(design, log_odds(design), &vec![0.0; design.p()]);
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Geometric grid from `lambda_max` down to `lambda_max * min_ratio`.
pub fn lambda_grid(lambda_max: f64, n: usize, min_ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let ratio = min_ratio.ln() / (n - 1) as f64;
    (0..n)
        .map(|k| lambda_max * (ratio * k as f64).exp())
        .collect()
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Coordinate descent state, reusable along a path for warm starts.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    design: &'a Design,
    pub intercept: f64,
    pub beta: Vec<f64>,
}

/// Floor on the working weights, so near-certain rows still move the fit.
const MIN_WEIGHT: f64 = 1e-5;

impl<'a> Solver<'a> {
    /// Starts from the null model: zero coefficients, intercept at the
    /// empirical log-odds.
    pub fn new(design: &'a Design) -> Self {
        Self {
            design,
            intercept: log_odds(design),
            beta: vec![0.0; design.p()],
        }
    }

    fn objective(&self, intercept: f64, beta: &[f64], lambda: f64) -> f64 {
        mean_nll(self.design, intercept, beta) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Cyclic sweeps on the weighted quadratic model until a sweep moves no
    /// parameter by `tol` or more. Returns the sweeps used.
    fn inner(
        &self,
        w: &[f64],
        resid: &mut [f64],
        point: &mut (f64, Vec<f64>),
        lambda: f64,
        budget: usize,
        tol: f64,
    ) -> usize {
        let (b0, beta) = (&mut point.0, &mut point.1);
        let n = self.design.n() as f64;
        let w_sum = w.iter().sum::<f64>() / n;
        let scale: Vec<f64> = self
            .design
            .columns
            .iter()
            .map(|c| c.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / n)
            .collect();
        let mut sweeps = 0;
        while sweeps < budget {
            sweeps += 1;
            let mut delta: f64 = 0.0;
            let step = resid.iter().zip(w).map(|(r, wi)| wi * r).sum::<f64>() / n / w_sum;
            if step != 0.0 {
                *b0 += step;
                resid.iter_mut().for_each(|r| *r -= step);
                delta = delta.max(step.abs());
            }
            for (j, col) in self.design.columns.iter().enumerate() {
                let a = scale[j];
                if a == 0.0 {
                    continue;
                }
                let g = col
                    .iter()
                    .zip(w.iter().zip(resid.iter()))
                    .map(|(x, (wi, r))| wi * x * r)
                    .sum::<f64>()
                    / n;
                let old = beta[j];
                let new = soft_threshold(a * old + g, lambda) / a;
                if new != old {
                    beta[j] = new;
                    for (r, x) in resid.iter_mut().zip(col) {
                        *r -= (new - old) * x;
                    }
                    delta = delta.max((new - old).abs());
                }
            }
            if delta < tol {
                break;
            }
        }
        sweeps
    }

    /// Iterates until an outer step changes no parameter by `tol` or more.
    /// `max_iter` bounds the total number of coordinate sweeps.
    pub fn solve(&mut self, lambda: f64, max_iter: usize, tol: f64) -> Result<usize> {
        let mut used = 0;
        let mut delta = f64::INFINITY;
        let mut current = self.objective(self.intercept, &self.beta, lambda);
        while used < max_iter {
            let eta = self.design.linear_predictor(self.intercept, &self.beta);
            let mut w = Vec::with_capacity(eta.len());
            let mut resid = Vec::with_capacity(eta.len());
            for (&e, &y) in eta.iter().zip(&self.design.y) {
                let p = sigmoid(e);
                let wi = (p * (1.0 - p)).max(MIN_WEIGHT);
                w.push(wi);
                resid.push((y - p) / wi);
            }
            let mut candidate = (self.intercept, self.beta.clone());
            used += self.inner(&w, &mut resid, &mut candidate, lambda, max_iter - used, tol);

            // Backtrack toward the previous fit if the full step overshoots.
            let d0 = candidate.0 - self.intercept;
            let d: Vec<f64> = candidate
                .1
                .iter()
                .zip(&self.beta)
                .map(|(a, b)| a - b)
                .collect();
            let mut t = 1.0;
            let mut value = self.objective(candidate.0, &candidate.1, lambda);
            while value > current && t > 1e-10 {
                t *= 0.5;
                candidate = (
                    self.intercept + t * d0,
                    self.beta.iter().zip(&d).map(|(b, dj)| b + t * dj).collect(),
                );
                value = self.objective(candidate.0, &candidate.1, lambda);
            }
            delta = d.iter().fold(d0.abs(), |m, v| m.max(v.abs())) * t;
            if value <= current {
                self.intercept = candidate.0;
                self.beta = candidate.1;
                current = value;
            }
            if delta < tol {
                return Ok(used);
            }
        }
        Err(Error::LassoNonConvergence { lambda, delta })
    }
}

/// Fits a single penalty from the null-model start.
pub fn fit_lasso_at(
    design: &Design,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut solver = Solver::new(design);
    solver.solve(lambda, max_iter, tol)?;
    Ok((solver.intercept, solver.beta))
}

fn mean_log_loss(design: &Design, intercept: f64, beta: &[f64]) -> f64 {
    const EPS: f64 = 1e-15;
    let eta = design.linear_predictor(intercept, beta);
    eta.iter()
        .zip(&design.y)
        .map(|(&e, &y)| {
            let p = sigmoid(e).clamp(EPS, 1.0 - EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / design.n() as f64
}

/// Penalty grid for a dataset's fitting rows.
pub fn default_grid(ds: &Dataset, cfg: &LassoConfig) -> Vec<f64> {
    let design = Design::from_dataset_rows(ds, &ds.fit_indices());
    lambda_grid(lambda_max(&design), cfg.n_lambdas, cfg.lambda_min_ratio)
}

/// Fits the path on `k`-fold stratified splits of the fitting rows, picks the
/// penalty with the lowest mean validation log-loss (ties go to the larger
/// penalty), and refits on all fitting rows along the path down to it.
pub fn fit_lasso_path(
    ds: &Dataset,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
    cfg: &LassoConfig,
) -> Result<LassoFit> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(
            "lambda grid must be strictly decreasing".into(),
        ));
    }
    if folds < 2 {
        return Err(Error::Config("lasso needs at least 2 folds".into()));
    }
    let rows = ds.fit_indices();
    let labels: Vec<u8> = rows.iter().map(|&i| ds.labels[i]).collect();
    let splits = stratified_kfold(&labels, folds, seed)?;

    let fold_losses: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|split| {
            let train: Vec<usize> = split.train_indices.iter().map(|&i| rows[i]).collect();
            let valid: Vec<usize> = split.test_indices.iter().map(|&i| rows[i]).collect();
            let dtrain = Design::from_dataset_rows(ds, &train);
            let dvalid = Design::from_dataset_rows(ds, &valid);
            let mut solver = Solver::new(&dtrain);
            lambdas
                .iter()
                .map(|&lambda| {
                    solver.solve(lambda, cfg.max_iter, cfg.tol)?;
                    Ok(mean_log_loss(&dvalid, solver.intercept, &solver.beta))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let cv_curve: Vec<CvPoint> = lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| CvPoint {
            lambda,
            mean_loss: fold_losses.iter().map(|f| f[k]).sum::<f64>() / folds as f64,
        })
        .collect();
    let mut best = 0;
    for (k, point) in cv_curve.iter().enumerate() {
        if point.mean_loss < cv_curve[best].mean_loss {
            best = k;
        }
    }

    let design = Design::from_dataset_rows(ds, &rows);
    let mut solver = Solver::new(&design);
    for &lambda in &lambdas[..=best] {
        solver.solve(lambda, cfg.max_iter, cfg.tol)?;
    }
    let names = ds.feature_names();
    let selected = names
        .iter()
        .zip(&solver.beta)
        .filter(|(_, &b)| b != 0.0)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(LassoFit {
        lambda: lambdas[best],
        intercept: solver.intercept,
        feature_names: names,
        coefficients: solver.beta,
        selected,
        cv_curve,
    })
}

/// Nonzero-coefficient features, optionally intersected with an expert
/// allowlist. An empty result is an error.
pub fn select_features(fit: &LassoFit, expert_allowlist: Option<&[String]>) -> Result<Vec<String>> {
    let chosen: Vec<String> = fit
        .selected
        .iter()
        .filter(|n| expert_allowlist.is_none_or(|allow| allow.contains(n)))
        .cloned()
        .collect();
    if chosen.is_empty() {
        return Err(Error::Selection(
            "no feature has a nonzero coefficient".into(),
        ));
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_design(n: usize, beta: &[f64], seed: u64) -> Design {
        let mut rng = stage_rng(seed);
        let p = beta.len();
        let mut x = Array2::zeros((n, p));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut eta = -0.5;
            for j in 0..p {
                let v: f64 = rng.sample(StandardNormal);
                x[[i, j]] = v;
                eta += beta[j] * v;
            }
            y.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
        }
        Design::new(&x, &y)
    }

    /// Plain full-gradient descent on the unpenalized likelihood.
    fn gradient_descent_oracle(design: &Design) -> (f64, Vec<f64>) {
        let mut b0 = 0.0;
        let mut beta = vec![0.0; design.p()];
        for _ in 0..2_000_000 {
            let (g0, g) = nll_gradient(design, b0, &beta);
            let norm = g.iter().fold(g0.abs(), |m, v| m.max(v.abs()));
            if norm < 1e-10 {
                break;
            }
            b0 -= 2.0 * g0;
            for (b, gj) in beta.iter_mut().zip(&g) {
                *b -= 2.0 * gj;
            }
        }
        (b0, beta)
    }

    #[test]
    fn full_shrinkage_at_lambda_max() {
        let d = random_design(200, &[1.0, -0.5, 0.0, 0.3], 1);
        let lmax = lambda_max(&d);
        for lambda in [lmax, lmax * 1.5] {
            let (b0, beta) = fit_lasso_at(&d, lambda, 10_000, 1e-7).unwrap();
            assert!(beta.iter().all(|&b| b == 0.0));
            let p = d.y.iter().sum::<f64>() / d.n() as f64;
            assert!((b0 - (p / (1.0 - p)).ln()).abs() < 1e-12);
        }
        let (_, beta) = fit_lasso_at(&d, lmax * 0.9, 10_000, 1e-7).unwrap();
        assert!(beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn unpenalized_matches_gradient_descent() {
        let d = random_design(80, &[0.8, -0.6, 0.2], 2);
        let (b0, beta) = fit_lasso_at(&d, 0.0, 100_000, 1e-10).unwrap();
        let (o0, obeta) = gradient_descent_oracle(&d);
        assert!((b0 - o0).abs() < 1e-4);
        for (a, b) in beta.iter().zip(&obeta) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn kkt_holds_along_path() {
        let d = random_design(300, &[1.0, 0.0, -0.7, 0.0, 0.4, 0.0], 3);
        let grid = lambda_grid(lambda_max(&d), 20, 1e-3);
        let mut solver = Solver::new(&d);
        for &lambda in &grid {
            solver.solve(lambda, 10_000, 1e-9).unwrap();
            assert!(kkt_residual(&d, solver.intercept, &solver.beta, lambda) <= 1e-6);
        }
    }

    #[test]
    fn column_scaling_rescales_unpenalized_coefficient() {
        let d = random_design(150, &[0.9, -0.4], 4);
        let (_, beta) = fit_lasso_at(&d, 0.0, 100_000, 1e-12).unwrap();
        let mut scaled = d.clone();
        let c = 3.5;
        for x in &mut scaled.columns[0] {
            *x *= c;
        }
        let (_, beta_s) = fit_lasso_at(&scaled, 0.0, 100_000, 1e-12).unwrap();
        assert!((beta_s[0] - beta[0] / c).abs() < 1e-6);
        assert!((beta_s[1] - beta[1]).abs() < 1e-6);
    }

    #[test]
    fn non_convergence_reports_lambda() {
        let d = random_design(100, &[1.0, 1.0], 5);
        match fit_lasso_at(&d, 0.001, 2, 1e-12) {
            Err(Error::LassoNonConvergence { lambda, delta }) => {
                assert_eq!(lambda, 0.001);
                assert!(delta > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_is_geometric_and_decreasing() {
        let g = lambda_grid(2.0, 100, 1e-3);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    fn fit_with(names: &[&str], coefs: &[f64]) -> LassoFit {
        LassoFit {
            lambda: 0.1,
            intercept: 0.0,
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            coefficients: coefs.to_vec(),
            selected: names
                .iter()
                .zip(coefs)
                .filter(|(_, &c)| c != 0.0)
                .map(|(n, _)| n.to_string())
                .collect(),
            cv_curve: vec![],
        }
    }

    #[test]
    fn selection_rules() {
        let zero = fit_with(&["a", "b"], &[0.0, 0.0]);
        assert!(matches!(
            select_features(&zero, None),
            Err(Error::Selection(_))
        ));
        let fit = fit_with(&["a", "b", "c", "d"], &[0.3, -0.1, 0.2, 0.0]);
        let allow: Vec<String> = ["b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(select_features(&fit, Some(&allow)).unwrap(), vec!["b", "c"]);
        assert_eq!(select_features(&fit, None).unwrap(), vec!["a", "b", "c"]);
    }
}
