//! Inverse classification: minimize the calibrated probability over the
//! directly mutable features by projected gradient descent, with the
//! indirect features re-estimated from every candidate.

mod region;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use region::{direction_bounds, FeasibleRegion, BISECTION_STEPS};

use crate::classifier::CalibratedClassifier;
use crate::data::{FeatureSchema, Role, ValueKind};
use crate::indirect::{IndirectError, IndirectModel};
use crate::matrix::DimensionMismatch;
use crate::seeding::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Indirect(#[from] IndirectError),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("budget bisection stalled with slack {slack}")]
    ProjectionNotConverged { slack: f64 },
    #[error("schema has indirect features but no indirect estimator was supplied")]
    MissingIndirectModel,
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    /// Stop once an accepted step improves the objective by less than this
    /// fraction of its value.
    pub rel_tol: f64,
    pub projection_tol: f64,
    /// Extra random feasible starting points; 0 runs only from the origin.
    pub multi_start: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            rel_tol: 1e-6,
            projection_tol: 1e-8,
            multi_start: 0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), InverseError> {
        let ok = self.initial_step > 0.0
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.armijo_c > 0.0
            && self.rel_tol > 0.0
            && self.projection_tol > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(InverseError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// The objective for one instance: its immutable block is fixed, the
/// direct block is the variable, and the indirect block follows from the
/// estimator.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    clf: &'a CalibratedClassifier,
    phi: Option<&'a IndirectModel>,
    u_idx: Vec<usize>,
    d_idx: Vec<usize>,
    i_idx: Vec<usize>,
    x_u: Vec<f64>,
    width: usize,
}

impl<'a> Objective<'a> {
    /// `x` is a full vector aligned to `schema`; only its immutable block is
    /// kept.
    pub fn new(
        clf: &'a CalibratedClassifier,
        phi: Option<&'a IndirectModel>,
        schema: &FeatureSchema,
        x: &[f64],
    ) -> Result<Self, InverseError> {
        DimensionMismatch::check(schema.len(), x.len())?;
        DimensionMismatch::check(schema.len(), clf.dim())?;
        let u_idx = schema.indices(Role::Immutable);
        let d_idx = schema.indices(Role::Direct);
        let i_idx = schema.indices(Role::Indirect);
        if !i_idx.is_empty() {
            let phi = phi.ok_or(InverseError::MissingIndirectModel)?;
            DimensionMismatch::check(i_idx.len(), phi.n_indirect())?;
            DimensionMismatch::check(d_idx.len(), phi.n_direct())?;
            DimensionMismatch::check(u_idx.len(), phi.n_immutable())?;
        }
        let x_u = u_idx.iter().map(|&j| x[j]).collect();
        Ok(Self {
            clf,
            phi: if i_idx.is_empty() { None } else { phi },
            u_idx,
            d_idx,
            i_idx,
            x_u,
            width: schema.len(),
        })
    }

    pub fn n_direct(&self) -> usize {
        self.d_idx.len()
    }

    pub fn immutable(&self) -> &[f64] {
        &self.x_u
    }

    /// Full vector with the indirect block estimated from `x_d`.
    pub fn assemble(&self, x_d: &[f64]) -> Result<Vec<f64>, InverseError> {
        DimensionMismatch::check(self.d_idx.len(), x_d.len())?;
        let mut x = vec![0.0; self.width];
        for (&j, &v) in self.u_idx.iter().zip(&self.x_u) {
            x[j] = v;
        }
        for (&j, &v) in self.d_idx.iter().zip(x_d) {
            x[j] = v;
        }
        if let Some(phi) = self.phi {
            for (&j, v) in self.i_idx.iter().zip(phi.estimate(&self.x_u, x_d)?) {
                x[j] = v;
            }
        }
        Ok(x)
    }

    pub fn value(&self, x_d: &[f64]) -> Result<f64, InverseError> {
        Ok(self.clf.predict_proba(&self.assemble(x_d)?)?)
    }

    /// Value and gradient with respect to `x_d`: the direct block of the
    /// classifier gradient plus the estimator Jacobian transposed onto the
    /// indirect block.
    pub fn value_and_grad(&self, x_d: &[f64]) -> Result<(f64, Vec<f64>), InverseError> {
        DimensionMismatch::check(self.d_idx.len(), x_d.len())?;
        let mut x = vec![0.0; self.width];
        for (&j, &v) in self.u_idx.iter().zip(&self.x_u) {
            x[j] = v;
        }
        for (&j, &v) in self.d_idx.iter().zip(x_d) {
            x[j] = v;
        }
        let jac = match self.phi {
            Some(phi) => {
                let (est, jac) = phi.estimate_with_jacobian(&self.x_u, x_d)?;
                for (&j, v) in self.i_idx.iter().zip(est) {
                    x[j] = v;
                }
                Some(jac)
            }
            None => None,
        };
        let (p, g) = self.clf.proba_and_grad(&x)?;
        let mut out: Vec<f64> = self.d_idx.iter().map(|&j| g[j]).collect();
        if let Some(jac) = jac {
            for (r, &j) in self.i_idx.iter().enumerate() {
                let gi = g[j];
                for (o, &jv) in out.iter_mut().zip(jac.row(r)) {
                    *o += gi * jv;
                }
            }
        }
        Ok((p, out))
    }
}

/// `f_v` at the instance with its immutable block fixed and direct block
/// `x_d`.
pub fn objective(
    clf: &CalibratedClassifier,
    phi: Option<&IndirectModel>,
    schema: &FeatureSchema,
    x: &[f64],
    x_d: &[f64],
) -> Result<f64, InverseError> {
    Objective::new(clf, phi, schema, x)?.value(x_d)
}

pub fn objective_grad(
    clf: &CalibratedClassifier,
    phi: Option<&IndirectModel>,
    schema: &FeatureSchema,
    x: &[f64],
    x_d: &[f64],
) -> Result<Vec<f64>, InverseError> {
    Ok(Objective::new(clf, phi, schema, x)?.value_and_grad(x_d)?.1)
}

/// Binary direct features rounded to 0/1 after the relaxed optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundedVariant {
    pub optimized: Vec<f64>,
    pub cost: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub id: String,
    pub visit: u32,
    pub budget: f64,
    /// The instance as given.
    pub observed: Vec<f64>,
    /// The instance with its indirect block estimated from the unchanged
    /// direct block; this is the point the optimizer starts from.
    pub original: Vec<f64>,
    pub optimized: Vec<f64>,
    pub deltas: Vec<f64>,
    pub cost: f64,
    pub prob_original: f64,
    pub prob_optimized: f64,
    /// Optimized instance scored with the next visit's immutable values.
    pub prob_next_visit: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub rounded: Option<RoundedVariant>,
}

impl RecommendationResult {
    /// The direct block of the optimized vector.
    pub fn optimized_direct(&self, schema: &FeatureSchema) -> Vec<f64> {
        schema.indices(Role::Direct).iter().map(|&j| self.optimized[j]).collect()
    }
}

/// Outcome of projected gradient descent on the direct block.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentRun {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting at the start point.
    pub trace: Vec<f64>,
}

fn descend(obj: &Objective, region: &FeasibleRegion, cfg: &OptimizerConfig, start: Vec<f64>) -> Result<DescentRun, InverseError> {
    let mut x = start;
    let (mut f, mut g) = obj.value_and_grad(&x)?;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut z = vec![0.0; x.len()];
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut eta = cfg.initial_step;
        let mut accepted = None;
        loop {
            for j in 0..x.len() {
                z[j] = x[j] - eta * g[j];
            }
            let xn = region.project(&z, cfg.projection_tol)?;
            if xn == x {
                break;
            }
            let slope: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), gj)| gj * (a - b)).sum();
            let fn_ = obj.value(&xn)?;
            if fn_ <= f + cfg.armijo_c * slope && fn_ <= f {
                accepted = Some((xn, fn_));
                break;
            }
            eta *= cfg.backtrack_factor;
            if eta < 1e-16 * cfg.initial_step {
                break;
            }
        }
        let Some((xn, fn_)) = accepted else {
            // The projected step vanished or no step length decreased f.
            converged = true;
            break;
        };
        let improvement = f - fn_;
        x = xn;
        f = fn_;
        trace.push(f);
        if improvement <= cfg.rel_tol * f.abs() {
            converged = true;
            break;
        }
        g = obj.value_and_grad(&x)?.1;
    }
    Ok(DescentRun {
        x,
        f,
        iterations,
        converged,
        trace,
    })
}

/// Projected gradient descent from `start` (default: the origin), plus any
/// configured random restarts; the best run is kept.
pub fn optimize(
    obj: &Objective,
    region: &FeasibleRegion,
    cfg: &OptimizerConfig,
    start: Option<&[f64]>,
) -> Result<DescentRun, InverseError> {
    cfg.validate()?;
    DimensionMismatch::check(obj.n_direct(), region.dim())?;
    let first = match start {
        Some(s) => region.project(s, cfg.projection_tol)?,
        None => region.origin.clone(),
    };
    let mut best = descend(obj, region, cfg, first)?;
    if cfg.multi_start > 0 {
        let mut rng = stream(cfg.seed, "multi-start");
        for _ in 0..cfg.multi_start {
            let z: Vec<f64> = (0..region.dim())
                .map(|j| region.lower[j] + rng.random::<f64>() * (region.upper[j] - region.lower[j]))
                .collect();
            let s = region.project(&z, cfg.projection_tol)?;
            let run = descend(obj, region, cfg, s)?;
            if run.f < best.f {
                best = run;
            }
        }
    }
    Ok(best)
}

/// One instance to optimize: a full vector aligned to `schema`.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub id: &'a str,
    pub visit: u32,
    pub schema: &'a FeatureSchema,
    pub x: &'a [f64],
    pub clf: &'a CalibratedClassifier,
    pub phi: Option<&'a IndirectModel>,
}

fn build_result(
    p: &Problem,
    obj: &Objective,
    region: &FeasibleRegion,
    run: DescentRun,
    prob_original: f64,
) -> Result<RecommendationResult, InverseError> {
    let original = obj.assemble(&region.origin)?;
    let optimized = obj.assemble(&run.x)?;
    let deltas = optimized.iter().zip(&original).map(|(a, b)| a - b).collect();
    let binary: Vec<usize> = p
        .schema
        .indices(Role::Direct)
        .iter()
        .enumerate()
        .filter(|(_, &j)| p.schema.feature(j).kind == ValueKind::Binary)
        .map(|(k, _)| k)
        .collect();
    let rounded = if binary.is_empty() {
        None
    } else {
        let mut xd = run.x.clone();
        for &k in &binary {
            xd[k] = xd[k].round();
        }
        Some(RoundedVariant {
            optimized: obj.assemble(&xd)?,
            cost: region.cost(&xd),
            probability: obj.value(&xd)?,
        })
    };
    Ok(RecommendationResult {
        id: p.id.to_string(),
        visit: p.visit,
        budget: region.budget,
        observed: p.x.to_vec(),
        original,
        optimized,
        deltas,
        cost: region.cost(&run.x),
        prob_original,
        prob_optimized: run.f,
        prob_next_visit: None,
        iterations: run.iterations,
        converged: run.converged,
        trace: run.trace,
        rounded,
    })
}

/// Optimize one instance at one budget.
pub fn recommend(p: &Problem, budget: f64, cfg: &OptimizerConfig) -> Result<RecommendationResult, InverseError> {
    Ok(budget_sweep(p, &[budget], cfg)?.pop().expect("one budget"))
}

/// Optimize one instance at each budget in ascending order, warm-starting
/// every budget from the previous solution. The feasible sets are nested,
/// so the final objective never increases along the sweep.
pub fn budget_sweep(p: &Problem, budgets: &[f64], cfg: &OptimizerConfig) -> Result<Vec<RecommendationResult>, InverseError> {
    if budgets.windows(2).any(|w| w[1] < w[0]) {
        return Err(InverseError::InvalidConfig("budgets must be ascending".into()));
    }
    let obj = Objective::new(p.clf, p.phi, p.schema, p.x)?;
    let base = FeasibleRegion::from_schema(p.schema, p.x, budgets.first().copied().unwrap_or(0.0))?;
    let prob_original = obj.value(&base.origin)?;
    let mut out = Vec::with_capacity(budgets.len());
    let mut warm: Option<Vec<f64>> = None;
    for &b in budgets {
        let region = base.with_budget(b)?;
        let run = optimize(&obj, &region, cfg, warm.as_deref())?;
        warm = Some(run.x.clone());
        out.push(build_result(p, &obj, &region, run, prob_original)?);
    }
    Ok(out)
}
