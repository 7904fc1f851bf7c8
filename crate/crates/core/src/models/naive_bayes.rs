use serde::{Deserialize, Serialize};

use super::{fit_rows, Family, HpReader, Hyperparams, Parameters, TrainedModel};
use crate::data::Dataset;
use crate::error::Result;

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    /// Class priors, index 0 for the negative class.
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

impl NbParams {
    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        let mut s = self.priors[c].ln();
        for ((v, m), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
            let d = v - m;
            s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
        }
        s
    }

    /// Posterior of the positive class, normalized with log-sum-exp.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let l0 = self.log_joint(0, x);
        let l1 = self.log_joint(1, x);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        (l1 - lse).exp()
    }
}

pub fn fit_gaussian_nb(train: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    HpReader::new(hp, Family::GaussianNb, &[])?;
    let (rows, labels) = fit_rows(train);
    let p = train.n_features();
    let mut means = [vec![0.0; p], vec![0.0; p]];
    let mut variances = [vec![0.0; p], vec![0.0; p]];
    let mut counts = [0usize; 2];
    for (r, &y) in rows.iter().zip(&labels) {
        let c = y as usize;
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(r) {
            *m += v;
        }
    }
    for c in 0..2 {
        for m in &mut means[c] {
            *m /= counts[c] as f64;
        }
    }
    for (r, &y) in rows.iter().zip(&labels) {
        let c = y as usize;
        for ((s, v), m) in variances[c].iter_mut().zip(r).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    for c in 0..2 {
        for s in &mut variances[c] {
            *s = (*s / counts[c] as f64).max(VARIANCE_FLOOR);
        }
    }
    let n = rows.len() as f64;
    let params = NbParams {
        priors: [counts[0] as f64 / n, counts[1] as f64 / n],
        means,
        variances,
    };
    Ok(TrainedModel::new(
        Family::GaussianNb,
        hp.clone(),
        Parameters::GaussianNb(params),
        train,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Predictor;
    use crate::rng::stage_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn gauss_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn symmetric_one_dimensional_toy() {
        let ds = Dataset::from_rows(
            &[vec![-1.0], vec![1.0], vec![1.0], vec![3.0]],
            vec![0, 0, 1, 1],
            &["x"],
        )
        .unwrap();
        let m = fit_gaussian_nb(&ds, &Hyperparams::new()).unwrap();
        assert!((m.predict_row(&[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_classes_give_prior() {
        let rows = vec![
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![0.0, 1.0],
            vec![2.0, 3.0],
        ];
        let mut all = rows.clone();
        all.extend(rows.iter().take(2).cloned());
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1];
        let ds = Dataset::from_rows(&all, labels, &["a", "b"]).unwrap();
        let m = fit_gaussian_nb(&ds, &Hyperparams::new()).unwrap();
        for x in [[0.0, 1.0], [5.0, -2.0], [1.0, 2.0]] {
            assert!((m.predict_row(&x) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_two_features() {
        // class 0: (0,0),(2,2) -> means (1,1), vars (1,1); class 1: (1,3),(3,5),(2,4) -> means (2,4), vars (2/3,2/3)
        let rows = vec![
            vec![0.0, 0.0],
            vec![2.0, 2.0],
            vec![1.0, 3.0],
            vec![3.0, 5.0],
            vec![2.0, 4.0],
        ];
        let ds = Dataset::from_rows(&rows, vec![0, 0, 1, 1, 1], &["a", "b"]).unwrap();
        let m = fit_gaussian_nb(&ds, &Hyperparams::new()).unwrap();
        let x = [1.5, 2.5];
        let j0 = 0.4 * gauss_pdf(1.5, 1.0, 1.0) * gauss_pdf(2.5, 1.0, 1.0);
        let j1 = 0.6 * gauss_pdf(1.5, 2.0, 2.0 / 3.0) * gauss_pdf(2.5, 4.0, 2.0 / 3.0);
        assert!((m.predict_row(&x) - j1 / (j0 + j1)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_floored() {
        let rows = vec![vec![1.0], vec![1.0], vec![2.0], vec![3.0]];
        let ds = Dataset::from_rows(&rows, vec![0, 0, 1, 1], &["a"]).unwrap();
        let m = fit_gaussian_nb(&ds, &Hyperparams::new()).unwrap();
        let Parameters::GaussianNb(p) = &m.parameters else {
            unreachable!()
        };
        assert_eq!(p.variances[0][0], VARIANCE_FLOOR);
        assert!(m.predict_row(&[1.0]) < 1e-6);
        assert!(m.predict_row(&[2.5]).is_finite());
    }

    proptest! {
        #[test]
        fn matches_closed_form_posterior(seed in any::<u64>(), p in 1usize..=3, n in 6usize..30) {
            let mut rng = stage_rng(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect();
            let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
            let names: Vec<&str> = ["a", "b", "c"][..p].to_vec();
            let ds = Dataset::from_rows(&rows, labels.clone(), &names).unwrap();
            let m = fit_gaussian_nb(&ds, &Hyperparams::new()).unwrap();
            let mut joint = [0.0; 2];
            for c in 0..2 {
                let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &y)| y as usize == c).map(|(r, _)| r).collect();
                let k = members.len() as f64;
                joint[c] = k / n as f64;
                for j in 0..p {
                    let mean = members.iter().map(|r| r[j]).sum::<f64>() / k;
                    let var = (members.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / k).max(VARIANCE_FLOOR);
                    joint[c] *= gauss_pdf(0.3, mean, var);
                }
            }
            let q = [0.3; 3];
            let want = joint[1] / (joint[0] + joint[1]);
            prop_assert!((m.predict_row(&q[..p]) - want).abs() < 1e-12);
        }
    }
}
