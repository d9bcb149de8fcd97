use serde::{Deserialize, Serialize};

use super::platt::{fit_platt, platt_probability};
use super::svm::{train_svm, SvmDualModel, SvmParams};
use super::ClassifierError;
use crate::matrix::{DimensionMismatch, Matrix};

pub const PLATT_MAX_ITER: usize = 100;

/// SVM with a Platt sigmoid on top; this is the probability model `f_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedClassifier {
    pub svm: SvmDualModel,
    pub platt_a: f64,
    pub platt_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_hash: Option<String>,
}

impl CalibratedClassifier {
    pub fn dim(&self) -> usize {
        self.svm.dim()
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        self.svm.decision_value(x)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        let s = self.svm.decision_value(x)?;
        Ok(platt_probability(self.platt_a, self.platt_b, s))
    }

    /// `P (1 - P) (-A) grad s(x)`.
    pub fn grad_proba(&self, x: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        let (_, g) = self.proba_and_grad(x)?;
        Ok(g)
    }

    pub fn proba_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), DimensionMismatch> {
        DimensionMismatch::check(self.dim(), x.len())?;
        let s = self.svm.decision_unchecked(x);
        let p = platt_probability(self.platt_a, self.platt_b, s);
        let scale = -self.platt_a * p * (1.0 - p);
        let mut g = self.svm.decision_grad_unchecked(x);
        for gi in &mut g {
            *gi *= scale;
        }
        Ok((p, g))
    }
}

/// Deterministic stratified fold labels: positives and negatives are each
/// dealt round-robin in row order.
pub fn stratified_folds(y: &[bool], folds: usize) -> Vec<usize> {
    let mut next = [0usize; 2];
    y.iter()
        .map(|&b| {
            let c = &mut next[b as usize];
            let f = *c % folds;
            *c += 1;
            f
        })
        .collect()
}

fn split_rows(fold_of: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold_of.len()).partition(|&i| fold_of[i] != fold)
}

/// Out-of-fold decision values; `None` if some training split is single-class.
pub fn cross_val_decisions(
    x: &Matrix,
    y: &[bool],
    params: &SvmParams,
    folds: usize,
) -> Result<Option<Vec<f64>>, ClassifierError> {
    let fold_of = stratified_folds(y, folds);
    let mut out = vec![0.0; y.len()];
    for fold in 0..folds {
        let (train, test) = split_rows(&fold_of, fold);
        if test.is_empty() {
            continue;
        }
        let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        if ty.iter().all(|&b| b) || ty.iter().all(|&b| !b) {
            return Ok(None);
        }
        let m = train_svm(&x.select_rows(&train), &ty, params)?;
        for &i in &test {
            out[i] = m.decision_unchecked(x.row(i));
        }
    }
    Ok(Some(out))
}

/// Train the SVM on all rows and fit Platt on out-of-fold decisions from
/// `platt_folds`-fold cross-validation; falls back to in-sample decisions
/// when a fold split would leave a single class.
pub fn train_calibrated(
    x: &Matrix,
    y: &[bool],
    params: &SvmParams,
    platt_folds: usize,
) -> Result<CalibratedClassifier, ClassifierError> {
    let svm = train_svm(x, y, params)?;
    let cv = if platt_folds >= 2 {
        cross_val_decisions(x, y, params, platt_folds)?
    } else {
        None
    };
    let decisions = match cv {
        Some(d) => d,
        None => x.iter_rows().map(|r| svm.decision_unchecked(r)).collect(),
    };
    let (platt_a, platt_b) = fit_platt(&decisions, y, PLATT_MAX_ITER)?;
    Ok(CalibratedClassifier {
        svm,
        platt_a,
        platt_b,
        schema_hash: None,
    })
}
