//! Gaussian-process surrogate with a squared-exponential kernel and expected
//! improvement.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const JITTER: f64 = 1e-6;
const LENGTH_SCALES: [f64; 8] = [0.03, 0.06, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
const SIGNAL_VARIANCES: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn forward_sub(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    for i in 0..b.len() {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn back_sub_t(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub log_marginal_likelihood: f64,
}

impl GaussianProcess {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        se_kernel(a, b, self.length_scale, self.signal_variance)
    }

    /// Fits on normalized inputs; kernel hyperparameters maximize the
    /// marginal likelihood over a fixed grid.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Config("surrogate needs matching, non-empty observations".into()));
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let mut best: Option<Self> = None;
        for &ls in &LENGTH_SCALES {
            for &sv in &SIGNAL_VARIANCES {
                let Some(gp) = Self::fit_fixed(x, &ys, ls, sv, y_mean, y_std) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| gp.log_marginal_likelihood > b.log_marginal_likelihood) {
                    best = Some(gp);
                }
            }
        }
        best.ok_or_else(|| Error::Undefined("no kernel setting gave a positive definite Gram matrix".into()))
    }

    fn fit_fixed(x: &[Vec<f64>], ys: &[f64], ls: f64, sv: f64, y_mean: f64, y_std: f64) -> Option<Self> {
        let n = x.len();
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| se_kernel(&x[i], &x[j], ls, sv) + if i == j { JITTER } else { 0.0 })
                    .collect()
            })
            .collect();
        let l = cholesky(&gram)?;
        let alpha = back_sub_t(&l, &forward_sub(&l, ys));
        let fit: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let log_det: f64 = (0..n).map(|i| l[i][i].ln()).sum();
        let lml = -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some(Self {
            x: x.to_vec(),
            l,
            alpha,
            y_mean,
            y_std,
            length_scale: ls,
            signal_variance: sv,
            log_marginal_likelihood: lml,
        })
    }

    /// Posterior mean and standard deviation in objective units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self.x.iter().map(|xi| self.kernel(xi, q)).collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward_sub(&self.l, &ks);
        let var = (self.signal_variance - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }

    /// Expected improvement over `best` for maximization.
    pub fn expected_improvement(&self, q: &[f64], best: f64) -> f64 {
        let (mu, sigma) = self.predict(q);
        expected_improvement(mu, sigma, best)
    }
}

pub fn se_kernel(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    signal_variance * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp()
}

pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let imp = mu - best;
    if sigma < 1e-12 {
        return imp.max(0.0);
    }
    let z = imp / sigma;
    let n = Normal::standard();
    imp * n.cdf(z) + sigma * n.pdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![vec![4.0, 2.0, 0.4], vec![2.0, 5.0, 1.0], vec![0.4, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
    }

    #[test]
    fn interpolates_observations() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin()).collect();
        let gp = GaussianProcess::fit(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, sd) = gp.predict(xi);
            assert!((mu - yi).abs() < 1e-3, "{mu} vs {yi}");
            assert!(sd < 1e-2);
        }
    }

    #[test]
    fn ei_is_nonnegative_and_monotone_in_mean() {
        assert!(expected_improvement(0.0, 1.0, 0.5) > 0.0);
        assert!(expected_improvement(1.0, 1.0, 0.5) > expected_improvement(0.0, 1.0, 0.5));
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
    }
}
