//! Nadaraya-Watson kernel regression for the indirectly mutable features,
//! with its exact Jacobian with respect to the direct features.
//!
//! Inputs are stored as `[x_D, x_U]` rows. Weights are evaluated with the
//! smallest squared distance subtracted from every exponent, which leaves the
//! normalized weights unchanged and keeps the denominator at least one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{GaussianKernel, KernelError};
use crate::matrix::{squared_distance, DimensionMismatch, Matrix};

/// Below this unshifted weight sum the query is treated as out of range.
const DENOMINATOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndirectError {
    #[error("indirect estimator needs at least one training row")]
    Empty,
    #[error("inputs have {inputs} rows but targets have {targets}")]
    RowCount { inputs: usize, targets: usize },
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectModel {
    /// `[x_D, x_U]` training rows.
    train_inputs: Matrix,
    /// `x_I` training rows.
    train_targets: Matrix,
    n_direct: usize,
    kernel: GaussianKernel,
}

/// Bandwidth selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndirectConfig {
    /// Fixed bandwidth; skips cross-validation when set.
    pub sigma: Option<f64>,
    pub sigma_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for IndirectConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            sigma_grid: log_grid(0.05, 2.0, 9),
            folds: 5,
        }
    }
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count)
        .map(|k| {
            if k == count - 1 {
                hi
            } else {
                lo * (r * k as f64).exp()
            }
        })
        .collect()
}

impl IndirectModel {
    pub fn new(
        train_inputs: Matrix,
        train_targets: Matrix,
        n_direct: usize,
        sigma: f64,
    ) -> Result<Self, IndirectError> {
        if train_inputs.rows() != train_targets.rows() {
            return Err(IndirectError::RowCount {
                inputs: train_inputs.rows(),
                targets: train_targets.rows(),
            });
        }
        if train_inputs.is_empty() {
            return Err(IndirectError::Empty);
        }
        if n_direct > train_inputs.cols() {
            return Err(DimensionMismatch {
                expected: train_inputs.cols(),
                found: n_direct,
            }
            .into());
        }
        Ok(Self {
            train_inputs,
            train_targets,
            n_direct,
            kernel: GaussianKernel::new(sigma)?,
        })
    }

    pub fn n_direct(&self) -> usize {
        self.n_direct
    }

    pub fn n_immutable(&self) -> usize {
        self.train_inputs.cols() - self.n_direct
    }

    pub fn n_indirect(&self) -> usize {
        self.train_targets.cols()
    }

    pub fn kernel(&self) -> GaussianKernel {
        self.kernel
    }

    pub fn train_inputs(&self) -> &Matrix {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &Matrix {
        &self.train_targets
    }

    fn query(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        DimensionMismatch::check(self.n_direct, x_d.len())?;
        DimensionMismatch::check(self.n_immutable(), x_u.len())?;
        let mut q = Vec::with_capacity(x_d.len() + x_u.len());
        q.extend_from_slice(x_d);
        q.extend_from_slice(x_u);
        Ok(q)
    }

    /// Normalized weights, or the index of the nearest row when the raw
    /// weight sum underflows.
    fn weights(&self, q: &[f64]) -> Result<Vec<f64>, usize> {
        let d2: Vec<f64> = self
            .train_inputs
            .iter_rows()
            .map(|r| squared_distance(r, q))
            .collect();
        let (nearest, d_min) = d2
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        let gamma = self.kernel.gamma();
        let mut w: Vec<f64> = d2.iter().map(|d| (-(d - d_min) * gamma).exp()).collect();
        let total: f64 = w.iter().sum();
        if -d_min * gamma + total.ln() < DENOMINATOR_FLOOR.ln() {
            return Err(nearest);
        }
        for wi in &mut w {
            *wi /= total;
        }
        Ok(w)
    }

    /// Kernel-weighted average of the training targets.
    pub fn estimate(&self, x_u: &[f64], x_d: &[f64]) -> Result<Vec<f64>, IndirectError> {
        let q = self.query(x_u, x_d)?;
        Ok(self.estimate_query(&q))
    }

    fn estimate_query(&self, q: &[f64]) -> Vec<f64> {
        match self.weights(q) {
            Err(nearest) => self.train_targets.row(nearest).to_vec(),
            Ok(w) => {
                let mut out = vec![0.0; self.n_indirect()];
                for (t, wi) in self.train_targets.iter_rows().zip(&w) {
                    for (o, tv) in out.iter_mut().zip(t) {
                        *o += wi * tv;
                    }
                }
                out
            }
        }
    }

    /// Estimate and Jacobian `d x_I / d x_D` (rows: indirect, cols: direct).
    pub fn estimate_with_jacobian(
        &self,
        x_u: &[f64],
        x_d: &[f64],
    ) -> Result<(Vec<f64>, Matrix), IndirectError> {
        let q = self.query(x_u, x_d)?;
        let (ni, nd) = (self.n_indirect(), self.n_direct);
        let mut jac = Matrix::zeros(ni, nd);
        let w = match self.weights(&q) {
            Err(nearest) => return Ok((self.train_targets.row(nearest).to_vec(), jac)),
            Ok(w) => w,
        };
        let mut out = vec![0.0; ni];
        for (t, wi) in self.train_targets.iter_rows().zip(&w) {
            for (o, tv) in out.iter_mut().zip(t) {
                *o += wi * tv;
            }
        }
        // d out / d x_D = sum_i w_i (t_i - out) (a_iD - x_D)' / sigma^2
        let inv_s2 = 1.0 / (self.kernel.sigma() * self.kernel.sigma());
        for ((a, t), &wi) in self.train_inputs.iter_rows().zip(self.train_targets.iter_rows()).zip(&w) {
            if wi == 0.0 {
                continue;
            }
            for r in 0..ni {
                let coef = wi * (t[r] - out[r]) * inv_s2;
                if coef == 0.0 {
                    continue;
                }
                let row = jac.row_mut(r);
                for c in 0..nd {
                    row[c] += coef * (a[c] - q[c]);
                }
            }
        }
        Ok((out, jac))
    }

    pub fn jacobian_wrt_direct(&self, x_u: &[f64], x_d: &[f64]) -> Result<Matrix, IndirectError> {
        Ok(self.estimate_with_jacobian(x_u, x_d)?.1)
    }
}

/// Choose the bandwidth by k-fold cross-validated mean squared error.
/// Rows are dealt to folds round-robin, so the result is deterministic.
pub fn select_bandwidth(
    inputs: &Matrix,
    targets: &Matrix,
    n_direct: usize,
    cfg: &IndirectConfig,
) -> Result<f64, IndirectError> {
    if let Some(s) = cfg.sigma {
        return Ok(s);
    }
    let n = inputs.rows();
    if n < cfg.folds.max(2) || cfg.sigma_grid.len() < 2 {
        return Ok(cfg.sigma_grid.first().copied().unwrap_or(1.0));
    }
    let folds = cfg.folds.max(2);
    let scores: Vec<f64> = cfg
        .sigma_grid
        .par_iter()
        .map(|&sigma| {
            let mut sse = 0.0;
            for f in 0..folds {
                let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % folds != f);
                let m = IndirectModel::new(
                    inputs.select_rows(&train),
                    targets.select_rows(&train),
                    n_direct,
                    sigma,
                )?;
                for &i in &test {
                    let est = m.estimate_query(inputs.row(i));
                    sse += squared_distance(&est, targets.row(i));
                }
            }
            Ok(sse)
        })
        .collect::<Result<_, IndirectError>>()?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    Ok(cfg.sigma_grid[best])
}
