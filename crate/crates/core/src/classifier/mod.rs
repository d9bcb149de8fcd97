//! RBF-kernel SVM trained on the dual, Platt-calibrated into a probability
//! model with an exact gradient.

mod calibrated;
mod platt;
mod svm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrated::{
    cross_val_decisions, stratified_folds, train_calibrated, CalibratedClassifier, PLATT_MAX_ITER,
};
pub use platt::{fit_platt, platt_probability};
pub use svm::{train_svm, SvmDualModel, SvmParams};

use crate::kernel::KernelError;
use crate::matrix::{DimensionMismatch, Matrix};
use crate::metrics::auc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training data must contain at least two rows and both classes")]
    SingleClass,
    #[error("solver did not converge after {iterations} iterations (residual {residual})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Hyperparameters and selection grid for the calibrated SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Fixed box bound; skips the C grid when set.
    pub c: Option<f64>,
    /// Fixed bandwidth; skips the sigma grid when set.
    pub sigma: Option<f64>,
    pub c_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    /// Folds used to score each grid point by out-of-fold AUC.
    pub tune_folds: usize,
    /// Folds producing the decisions the Platt sigmoid is fitted on.
    pub platt_folds: usize,
    pub tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            c: None,
            sigma: None,
            c_grid: vec![0.1, 1.0, 10.0],
            sigma_grid: vec![0.1, 0.5, 1.0, 2.0],
            tune_folds: 3,
            platt_folds: 3,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub c: f64,
    pub sigma: f64,
    /// Out-of-fold AUC; `None` when it could not be computed.
    pub auc: Option<f64>,
}

/// Pick `(C, sigma)` by cross-validated AUC. Ties go to the earlier grid
/// point, so the choice is deterministic.
pub fn select_params(
    x: &Matrix,
    y: &[bool],
    cfg: &ClassifierConfig,
) -> Result<(SvmParams, Vec<GridScore>), ClassifierError> {
    let cs = cfg.c.map(|c| vec![c]).unwrap_or_else(|| cfg.c_grid.clone());
    let sigmas = cfg.sigma.map(|s| vec![s]).unwrap_or_else(|| cfg.sigma_grid.clone());
    if cs.is_empty() || sigmas.is_empty() {
        return Err(ClassifierError::InvalidParameter("empty hyperparameter grid".into()));
    }
    let with = |c: f64, sigma: f64| SvmParams {
        tol: cfg.tol,
        ..SvmParams::new(c, sigma)
    };
    if cs.len() == 1 && sigmas.len() == 1 {
        return Ok((with(cs[0], sigmas[0]), Vec::new()));
    }
    let grid: Vec<(f64, f64)> = cs
        .iter()
        .flat_map(|&c| sigmas.iter().map(move |&s| (c, s)))
        .collect();
    let scores: Vec<GridScore> = grid
        .par_iter()
        .map(|&(c, sigma)| {
            let dec = cross_val_decisions(x, y, &with(c, sigma), cfg.tune_folds)?;
            Ok(GridScore {
                c,
                sigma,
                auc: dec.and_then(|d| auc(&d, y)),
            })
        })
        .collect::<Result<_, ClassifierError>>()?;
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if s.auc.unwrap_or(f64::NEG_INFINITY) > scores[best].auc.unwrap_or(f64::NEG_INFINITY) {
            best = k;
        }
    }
    Ok((with(scores[best].c, scores[best].sigma), scores))
}

/// Select hyperparameters, then train the calibrated model.
pub fn fit_classifier(
    x: &Matrix,
    y: &[bool],
    cfg: &ClassifierConfig,
) -> Result<CalibratedClassifier, ClassifierError> {
    let (params, _) = select_params(x, y, cfg)?;
    train_calibrated(x, y, &params, cfg.platt_folds)
}
