//! Missing-feature estimators: a feature observed at visit 1 but absent at a
//! later visit is predicted from the features that are present there.

mod cart;
mod linear;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cart::{RegressionTree, SplitCriterion};
pub use linear::{fit_logistic, fit_ridge, sigmoid, LinearModel};

use crate::data::{LongitudinalCohort, ValueKind};
use crate::matrix::{squared_distance, DimensionMismatch, Matrix};
use crate::metrics::auc;
use crate::seeding::stable_hash;

/// Gradient-norm stopping threshold for the logistic Newton solver.
pub const LOGISTIC_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputeError {
    #[error("no training rows")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{method} cannot model a {kind:?} target")]
    KindMismatch { method: &'static str, kind: ValueKind },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("{method} did not converge after {iterations} iterations")]
    NotConverged { method: &'static str, iterations: usize },
    #[error("carry-forward needs the previous visit's value of `{0}`")]
    MissingPrior(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    CarryForward,
    Knn,
    Ridge,
    Logistic,
    Cart,
}

impl ImputeMethod {
    pub const ALL: [ImputeMethod; 5] = [
        ImputeMethod::CarryForward,
        ImputeMethod::Knn,
        ImputeMethod::Ridge,
        ImputeMethod::Logistic,
        ImputeMethod::Cart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImputeMethod::CarryForward => "carry_forward",
            ImputeMethod::Knn => "knn",
            ImputeMethod::Ridge => "ridge",
            ImputeMethod::Logistic => "logistic",
            ImputeMethod::Cart => "cart",
        }
    }

    pub fn supports(self, kind: ValueKind) -> bool {
        match self {
            ImputeMethod::Ridge => kind == ValueKind::Continuous,
            ImputeMethod::Logistic => kind == ValueKind::Binary,
            _ => true,
        }
    }

    /// The method used when nothing else is configured.
    pub fn default_for(kind: ValueKind) -> Self {
        match kind {
            ValueKind::Continuous => ImputeMethod::Ridge,
            ValueKind::Binary => ImputeMethod::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerParams {
    pub k: usize,
    pub ridge_lambda: f64,
    pub cart_max_depth: usize,
    pub cart_min_leaf: usize,
    pub logistic_max_iter: usize,
}

impl Default for ImputerParams {
    fn default() -> Self {
        Self {
            k: 5,
            ridge_lambda: 1.0,
            cart_max_depth: 6,
            cart_min_leaf: 20,
            logistic_max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputerState {
    CarryForward,
    Knn { inputs: Matrix, targets: Vec<f64>, k: usize },
    Ridge(LinearModel),
    Logistic(LinearModel),
    Cart(RegressionTree),
}

/// A fitted estimator for one missing feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub target: String,
    pub kind: ValueKind,
    pub method: ImputeMethod,
    /// Names of the input columns, in the order `impute` expects them.
    pub inputs: Vec<String>,
    pub state: ImputerState,
}

pub fn fit_imputer(
    method: ImputeMethod,
    target: &str,
    kind: ValueKind,
    inputs: &[String],
    x: &Matrix,
    t: &[f64],
    params: &ImputerParams,
) -> Result<ImputerModel, ImputeError> {
    if !method.supports(kind) {
        return Err(ImputeError::KindMismatch {
            method: method.name(),
            kind,
        });
    }
    DimensionMismatch::check(inputs.len(), x.cols())?;
    DimensionMismatch::check(x.rows(), t.len())?;
    if method != ImputeMethod::CarryForward && x.rows() == 0 {
        return Err(ImputeError::Empty);
    }
    let state = match method {
        ImputeMethod::CarryForward => ImputerState::CarryForward,
        ImputeMethod::Knn => {
            if params.k == 0 {
                return Err(ImputeError::InvalidParameter("k must be at least 1".into()));
            }
            ImputerState::Knn {
                inputs: x.clone(),
                targets: t.to_vec(),
                k: params.k,
            }
        }
        ImputeMethod::Ridge => ImputerState::Ridge(fit_ridge(x, t, params.ridge_lambda)?),
        ImputeMethod::Logistic => {
            ImputerState::Logistic(fit_logistic(x, t, params.logistic_max_iter, LOGISTIC_GRAD_TOL)?)
        }
        ImputeMethod::Cart => {
            let criterion = match kind {
                ValueKind::Continuous => SplitCriterion::SquaredError,
                ValueKind::Binary => SplitCriterion::Gini,
            };
            ImputerState::Cart(RegressionTree::fit(
                x,
                t,
                params.cart_max_depth,
                params.cart_min_leaf,
                criterion,
            ))
        }
    };
    Ok(ImputerModel {
        target: target.to_string(),
        kind,
        method,
        inputs: inputs.to_vec(),
        state,
    })
}

impl ImputerModel {
    /// Predict the target. Binary targets come back as probabilities except
    /// for kNN, which votes.
    pub fn impute(&self, x: &[f64], prior: Option<f64>) -> Result<f64, ImputeError> {
        if let ImputerState::CarryForward = self.state {
            return prior.ok_or_else(|| ImputeError::MissingPrior(self.target.clone()));
        }
        DimensionMismatch::check(self.inputs.len(), x.len())?;
        Ok(match &self.state {
            ImputerState::CarryForward => unreachable!(),
            ImputerState::Knn { inputs, targets, k } => knn_predict(inputs, targets, *k, x, self.kind),
            ImputerState::Ridge(m) => m.predict(x),
            ImputerState::Logistic(m) => sigmoid(m.predict(x)),
            ImputerState::Cart(t) => t.predict(x),
        })
    }
}

/// Mean (continuous) or majority vote with ties going to 1 (binary) of the
/// `k` nearest rows; distance ties are broken by row order.
fn knn_predict(inputs: &Matrix, targets: &[f64], k: usize, x: &[f64], kind: ValueKind) -> f64 {
    let mut d: Vec<(f64, usize)> = inputs
        .iter_rows()
        .enumerate()
        .map(|(i, r)| (squared_distance(r, x), i))
        .collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    let mean = d[..k].iter().map(|&(_, i)| targets[i]).sum::<f64>() / k as f64;
    match kind {
        ValueKind::Continuous => mean,
        ValueKind::Binary => {
            if mean >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Auc,
}

impl MetricKind {
    pub fn for_kind(kind: ValueKind) -> Self {
        match kind {
            ValueKind::Continuous => MetricKind::Mse,
            ValueKind::Binary => MetricKind::Auc,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Mse => "MSE",
            MetricKind::Auc => "AUC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub feature: String,
    pub method: ImputeMethod,
    pub metric: MetricKind,
    /// `None` when the method does not apply to the feature's kind or no
    /// fold produced a defined metric.
    pub value: Option<f64>,
    /// Folds left out because their fit did not exist or, for AUC, because
    /// they held a single class.
    pub skipped_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeComparison {
    pub features: Vec<(String, MetricKind)>,
    pub methods: Vec<ImputeMethod>,
    pub cells: Vec<ComparisonCell>,
}

impl ImputeComparison {
    pub fn get(&self, feature: &str, method: ImputeMethod) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.feature == feature && c.method == method)
    }

    pub fn value(&self, feature: &str, method: ImputeMethod) -> Option<f64> {
        self.get(feature, method).and_then(|c| c.value)
    }

    /// One row per method, one column per feature; inapplicable cells are
    /// written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for (f, m) in &self.features {
            let _ = write!(s, ",{f} ({})", m.label());
        }
        s.push('\n');
        for &method in &self.methods {
            s.push_str(method.name());
            for (f, _) in &self.features {
                match self.value(f, method) {
                    Some(v) => {
                        let _ = write!(s, ",{v:.6}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Cross-validated comparison of imputation methods at `eval_visit`.
///
/// Ids observed at `eval_visit` are dealt into `folds` folds by a seeded
/// hash. For each fold, estimators are fitted on the visit-1 rows of every
/// id outside the fold, using the other features observed at `eval_visit`
/// as inputs, and then predict the fold's `eval_visit` values. Carry-forward
/// predicts the value observed at the previous visit.
pub fn compare_imputers(
    cohort: &LongitudinalCohort,
    targets: &[String],
    methods: &[ImputeMethod],
    folds: usize,
    eval_visit: u32,
    seed: u64,
    params: &ImputerParams,
) -> Result<ImputeComparison, ImputeError> {
    if folds < 2 {
        return Err(ImputeError::InvalidParameter("at least two folds are required".into()));
    }
    if eval_visit < 2 {
        return Err(ImputeError::InvalidParameter("evaluation visit must be 2 or later".into()));
    }
    let v1 = cohort
        .visit(1)
        .ok_or_else(|| ImputeError::InvalidParameter("cohort has no visits".into()))?;
    let ve = cohort
        .visit(eval_visit)
        .ok_or_else(|| ImputeError::InvalidParameter(format!("cohort has no visit {eval_visit}")))?;
    let prev = cohort.visit(eval_visit - 1).expect("earlier visits exist");

    let mut order: Vec<(u64, &str)> = ve
        .ids()
        .map(|id| (stable_hash(seed, &["impute-fold", id]), id))
        .collect();
    order.sort();
    let fold_of: BTreeMap<&str, usize> = order.iter().enumerate().map(|(k, &(_, id))| (id, k % folds)).collect();

    let mut features = Vec::new();
    let mut cells = Vec::new();
    for target in targets {
        let spec_idx = cohort
            .schema()
            .index_of(target)
            .ok_or_else(|| ImputeError::UnknownFeature(target.clone()))?;
        let kind = cohort.schema().feature(spec_idx).kind;
        let (te, tp) = match (ve.schema().index_of(target), prev.schema().index_of(target)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(ImputeError::InvalidParameter(format!(
                    "`{target}` must be observed at visits {} and {eval_visit}",
                    eval_visit - 1
                )))
            }
        };
        let input_names: Vec<String> = ve.schema().names().filter(|n| *n != target).map(str::to_string).collect();
        let in_e: Vec<usize> = input_names.iter().map(|n| ve.schema().index_of(n).unwrap()).collect();
        let in_1: Vec<usize> = input_names.iter().map(|n| v1.schema().index_of(n).unwrap()).collect();
        let t1 = v1.schema().index_of(target).unwrap();
        let metric = MetricKind::for_kind(kind);
        features.push((target.clone(), metric));

        for &method in methods {
            if !method.supports(kind) {
                cells.push(ComparisonCell {
                    feature: target.clone(),
                    method,
                    metric,
                    value: None,
                    skipped_folds: 0,
                });
                continue;
            }
            let mut pooled_pred = Vec::new();
            let mut pooled_truth = Vec::new();
            let mut fold_aucs = Vec::new();
            let mut skipped = 0;
            for fold in 0..folds {
                let mut x = Matrix::with_cols(in_1.len());
                let mut t = Vec::new();
                for inst in v1.instances() {
                    if fold_of.get(inst.id.as_str()) == Some(&fold) {
                        continue;
                    }
                    let row: Vec<f64> = in_1.iter().map(|&j| inst.values[j]).collect();
                    x.push_row(&row)?;
                    t.push(inst.values[t1]);
                }
                // A fold whose fit does not exist (separated or degenerate
                // training data) is reported as skipped.
                let model = match fit_imputer(method, target, kind, &input_names, &x, &t, params) {
                    Ok(m) => m,
                    Err(ImputeError::NotConverged { .. } | ImputeError::Singular(_)) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut pred = Vec::new();
                let mut truth = Vec::new();
                for inst in ve.instances() {
                    if fold_of[inst.id.as_str()] != fold {
                        continue;
                    }
                    let row: Vec<f64> = in_e.iter().map(|&j| inst.values[j]).collect();
                    let prior = prev.get(&inst.id).map(|(p, _)| p.values[tp]);
                    pred.push(model.impute(&row, prior)?);
                    truth.push(inst.values[te]);
                }
                match metric {
                    MetricKind::Mse => {
                        pooled_pred.extend(pred);
                        pooled_truth.extend(truth);
                    }
                    MetricKind::Auc => {
                        let labels: Vec<bool> = truth.iter().map(|&v| v >= 0.5).collect();
                        match auc(&pred, &labels) {
                            Some(a) => fold_aucs.push(a),
                            None => skipped += 1,
                        }
                    }
                }
            }
            let value = match metric {
                MetricKind::Mse => {
                    (!pooled_pred.is_empty()).then(|| crate::metrics::mse(&pooled_pred, &pooled_truth))
                }
                MetricKind::Auc => {
                    (!fold_aucs.is_empty()).then(|| fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64)
                }
            };
            cells.push(ComparisonCell {
                feature: target.clone(),
                method,
                metric,
                value,
                skipped_folds: skipped,
            });
        }
    }
    Ok(ImputeComparison {
        features,
        methods: methods.to_vec(),
        cells,
    })
}
