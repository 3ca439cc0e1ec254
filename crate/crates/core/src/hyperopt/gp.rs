use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{Point, DIMS};
use crate::error::{Error, Result};

const JITTER: f64 = 1e-6;
const LENGTHSCALES: [f64; 9] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0];
const AMPLITUDES: [f64; 3] = [0.5, 1.0, 2.0];

fn matern52(a: &Point, b: &Point, ell: f64, amp: f64) -> f64 {
    let r = (0..DIMS).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt() / ell;
    let s = 5f64.sqrt() * r;
    amp * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Zero-mean GP on standardized observations; lengthscale and amplitude
/// chosen on a grid by marginal likelihood.
pub struct GaussianProcess {
    x: Vec<Point>,
    y_mean: f64,
    y_std: f64,
    ell: f64,
    amp: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GaussianProcess {
    pub fn fit(x: &[Point], y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.len() != n {
            return Err(Error::numeric("GP needs matching non-empty observations"));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = var.sqrt();
        if !(y_std > 0.0) {
            return Err(Error::numeric("observations have zero spread"));
        }
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));
        let mut best: Option<(f64, Self)> = None;
        for &ell in &LENGTHSCALES {
            for &amp in &AMPLITUDES {
                let k = DMatrix::from_fn(n, n, |i, j| {
                    matern52(&x[i], &x[j], ell, amp) + if i == j { JITTER } else { 0.0 }
                });
                let Some(chol) = Cholesky::new(k) else { continue };
                let alpha = chol.solve(&ys);
                let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
                let lml = -0.5 * ys.dot(&alpha) - log_det;
                if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((
                        lml,
                        Self {
                            x: x.to_vec(),
                            y_mean,
                            y_std,
                            ell,
                            amp,
                            chol,
                            alpha,
                        },
                    ));
                }
            }
        }
        best.map(|b| b.1)
            .ok_or_else(|| Error::numeric("no kernel setting gave a positive definite covariance"))
    }

    /// Posterior mean and standard deviation in the original units.
    pub fn predict(&self, p: &Point) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(xi, p, self.ell, self.amp)));
        let mu = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular solve");
        let var = (self.amp - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    if sd <= 0.0 {
        return (best - mu).max(0.0);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = (best - mu) / sd;
    (best - mu) * n.cdf(z) + sd * n.pdf(z)
}
