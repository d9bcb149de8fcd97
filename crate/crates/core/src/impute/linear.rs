//! Ridge and logistic regression with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ImputeError;
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

fn column_means(x: &Matrix) -> Vec<f64> {
    let n = x.rows().max(1) as f64;
    (0..x.cols()).map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Solves `(Xc' Xc + lambda I) w = Xc' tc` on centered data, then recovers the
/// intercept from the means.
pub fn fit_ridge(x: &Matrix, t: &[f64], lambda: f64) -> Result<LinearModel, ImputeError> {
    if !(lambda > 0.0) {
        return Err(ImputeError::InvalidParameter(format!(
            "ridge penalty must be positive (got {lambda}); the normal equations may be singular"
        )));
    }
    if x.rows() == 0 {
        return Err(ImputeError::Empty);
    }
    let p = x.cols();
    let mx = column_means(x);
    let mt = t.iter().sum::<f64>() / t.len() as f64;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut xc = vec![0.0; p];
    for (r, &ti) in x.iter_rows().zip(t) {
        for j in 0..p {
            xc[j] = r[j] - mx[j];
        }
        let tc = ti - mt;
        for j in 0..p {
            b[j] += xc[j] * tc;
            for k in 0..=j {
                a[(j, k)] += xc[j] * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
        a[(j, j)] += lambda;
    }
    let w = a
        .cholesky()
        .ok_or_else(|| ImputeError::Singular("ridge normal equations".into()))?
        .solve(&b);
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = mt - dot(&weights, &mx);
    Ok(LinearModel { weights, intercept })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logistic_nll(x: &Matrix, t: &[f64], w: &DVector<f64>) -> f64 {
    let p = x.cols();
    x.iter_rows()
        .zip(t)
        .map(|(r, &ti)| {
            let z = w[p] + (0..p).map(|j| w[j] * r[j]).sum::<f64>();
            // log(1 + e^z) - t z, computed stably.
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - ti * z
        })
        .sum::<f64>()
        / x.rows() as f64
}

/// Newton-Raphson on the mean log-loss until the gradient norm drops below
/// `grad_tol`.
pub fn fit_logistic(x: &Matrix, t: &[f64], max_iter: usize, grad_tol: f64) -> Result<LinearModel, ImputeError> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        return Err(ImputeError::Empty);
    }
    let mut w = DVector::<f64>::zeros(p + 1);
    let mut f = logistic_nll(x, t, &w);
    let mut row = vec![0.0; p + 1];
    for _ in 0..max_iter {
        let mut g = DVector::<f64>::zeros(p + 1);
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        for (r, &ti) in x.iter_rows().zip(t) {
            row[..p].copy_from_slice(r);
            row[p] = 1.0;
            let z: f64 = (0..=p).map(|j| w[j] * row[j]).sum();
            let pr = sigmoid(z);
            let d = pr * (1.0 - pr);
            for j in 0..=p {
                g[j] += (pr - ti) * row[j];
                for k in 0..=j {
                    h[(j, k)] += d * row[j] * row[k];
                }
            }
        }
        g /= n as f64;
        h /= n as f64;
        for j in 0..=p {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => h
                .lu()
                .solve(&g)
                .ok_or_else(|| ImputeError::Singular("logistic Hessian".into()))?,
        };
        // On separable data the gradient also vanishes, but the Newton
        // steps keep a fixed size as the weights run off to infinity.
        if g.norm() < grad_tol && step.norm() <= 1e-6 * (1.0 + w.norm()) {
            let weights = w.rows(0, p).iter().copied().collect();
            return Ok(LinearModel {
                weights,
                intercept: w[p],
            });
        }
        let mut eta = 1.0;
        loop {
            let cand = &w - &step * eta;
            let fc = logistic_nll(x, t, &cand);
            if fc <= f || eta < 1e-10 {
                w = cand;
                f = fc;
                break;
            }
            eta *= 0.5;
        }
    }
    Err(ImputeError::NotConverged {
        method: "logistic",
        iterations: max_iter,
    })
}
