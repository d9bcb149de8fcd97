//! Kernel SVM trained on the dual with sequential minimal optimization.
//!
//! The solver works on `beta_i = y_i alpha_i`, which turns the dual into
//!
//! ```text
//! max  sum_i y_i beta_i - 1/2 beta' K beta
//! s.t. sum_i beta_i = 0,  lb_i <= beta_i <= ub_i
//! ```
//!
//! with `[lb, ub] = [0, C]` for positives and `[-C, 0]` for negatives. Each
//! step moves the maximal violating pair `(i, j)` by `beta_i += t`,
//! `beta_j -= t`, which keeps the equality constraint exact.

use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::kernel::GaussianKernel;
use crate::matrix::{DimensionMismatch, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub sigma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Pair updates allowed are `max_passes * n`; `None` means `10 n` passes.
    #[serde(default)]
    pub max_passes: Option<usize>,
}

impl SvmParams {
    pub fn new(c: f64, sigma: f64) -> Self {
        Self {
            c,
            sigma,
            tol: 1e-3,
            max_passes: None,
        }
    }
}

/// Trained dual model restricted to its support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDualModel {
    pub support_vectors: Matrix,
    /// `alpha_i y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    /// Row of each support vector in the training matrix.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    pub kernel: GaussianKernel,
    pub c: f64,
    /// Pair updates the solver performed.
    pub iterations: usize,
}

impl SvmDualModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    /// Raw decision value `sum_i dual_coef_i k(x_i, x) + b`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        DimensionMismatch::check(self.dim(), x.len())?;
        Ok(self.decision_unchecked(x))
    }

    pub(crate) fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter_rows()
            .zip(&self.dual_coef)
            .map(|(sv, &a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// Gradient of the decision value with respect to `x`.
    pub(crate) fn decision_grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (sv, &a) in self.support_vectors.iter_rows().zip(&self.dual_coef) {
            self.kernel.accumulate_grad(sv, x, a, &mut g);
        }
        g
    }

    /// Dual objective `sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j k_ij`.
    pub fn dual_objective(&self) -> f64 {
        let n = self.dual_coef.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += self.dual_coef[i]
                    * self.dual_coef[j]
                    * self
                        .kernel
                        .eval(self.support_vectors.row(i), self.support_vectors.row(j));
            }
        }
        self.dual_coef.iter().map(|b| b.abs()).sum::<f64>() - 0.5 * quad
    }

    /// Largest KKT violation over the training set, measured on `y g(x)`.
    pub fn kkt_violation(&self, x: &Matrix, y: &[bool]) -> f64 {
        let mut alpha = vec![0.0; x.rows()];
        for (&i, &b) in self.support_indices.iter().zip(&self.dual_coef) {
            alpha[i] = b.abs();
        }
        let mut worst: f64 = 0.0;
        for i in 0..x.rows() {
            let yi = if y[i] { 1.0 } else { -1.0 };
            let margin = yi * self.decision_unchecked(x.row(i));
            let v = if alpha[i] <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if alpha[i] >= self.c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Solve the dual for labels `y` (true = class 1).
pub fn train_svm(x: &Matrix, y: &[bool], params: &SvmParams) -> Result<SvmDualModel, ClassifierError> {
    let n = x.rows();
    DimensionMismatch::check(n, y.len())?;
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(ClassifierError::InvalidParameter(format!("C = {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(ClassifierError::InvalidParameter(format!("tol = {}", params.tol)));
    }
    let kernel = GaussianKernel::new(params.sigma)?;
    let positives = y.iter().filter(|&&b| b).count();
    if n < 2 || positives == 0 || positives == n {
        return Err(ClassifierError::SingleClass);
    }

    let sign: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        gram[i * n + i] = 1.0;
        for j in 0..i {
            let k = kernel.eval(x.row(i), x.row(j));
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let (lb, ub): (Vec<f64>, Vec<f64>) = sign
        .iter()
        .map(|&s| if s > 0.0 { (0.0, params.c) } else { (-params.c, 0.0) })
        .unzip();
    let mut beta = vec![0.0; n];
    // f_i = y_i - sum_j beta_j k_ij; optimality is max_{up} f <= min_{low} f.
    let mut f = sign.clone();

    let max_updates = params.max_passes.unwrap_or(10 * n).saturating_mul(n);
    let mut iterations = 0;
    let (m_up, m_low) = loop {
        let mut i_up = usize::MAX;
        let mut i_low = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for k in 0..n {
            if beta[k] < ub[k] && f[k] > m_up {
                m_up = f[k];
                i_up = k;
            }
            if beta[k] > lb[k] && f[k] < m_low {
                m_low = f[k];
                i_low = k;
            }
        }
        if m_up - m_low <= params.tol {
            break (m_up, m_low);
        }
        if iterations >= max_updates {
            return Err(ClassifierError::NotConverged {
                iterations,
                residual: m_up - m_low,
            });
        }
        iterations += 1;

        let (i, j) = (i_up, i_low);
        let eta = (gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j]).max(1e-12);
        let room_i = ub[i] - beta[i];
        let room_j = beta[j] - lb[j];
        let mut t = (m_up - m_low) / eta;
        let mut clip_i = false;
        let mut clip_j = false;
        if t >= room_i {
            t = room_i;
            clip_i = true;
        }
        if t >= room_j {
            t = room_j;
            clip_j = true;
            clip_i = room_i == room_j;
        }
        beta[i] = if clip_i { ub[i] } else { beta[i] + t };
        beta[j] = if clip_j { lb[j] } else { beta[j] - t };
        let (ri, rj) = (&gram[i * n..(i + 1) * n], &gram[j * n..(j + 1) * n]);
        for k in 0..n {
            f[k] -= t * (ri[k] - rj[k]);
        }
    };

    // Any b in [m_up, m_low] satisfies KKT to within tol; the midpoint halves the residual.
    let bias = 0.5 * (m_up + m_low);
    let support_indices: Vec<usize> = (0..n).filter(|&k| beta[k] != 0.0).collect();
    let support_vectors = x.select_rows(&support_indices);
    let dual_coef = support_indices.iter().map(|&k| beta[k]).collect();
    Ok(SvmDualModel {
        support_vectors,
        dual_coef,
        support_indices,
        bias,
        kernel,
        c: params.c,
        iterations,
    })
}
