//! Synthetic cohort generation and the evaluation experiments.

pub mod generator;
pub mod protocol;
pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generator::{
    generate_cohort, generator_schema, ExtraDims, GeneratorSpec, HazardCoefficients, NoiseScales, IMPUTATION_TARGETS,
    LINEAR_TARGET, LOGISTIC_TARGET, RANDOM_WALK_TARGET,
};
pub use protocol::{
    fit_scaler, run_partition_protocol, AccessRecord, BudgetOutcome, Context, EvaluationPlan, FoldRecord,
    InstanceOutcome, Partition, VisitRun,
};
pub use report::{fmt_f64, plot_table, PlotPoint, Summary, Table};

use crate::data::{Direction, LongitudinalCohort, Role};
use crate::impute::{compare_imputers, ImputeComparison, ImputeMethod, ImputerParams};
use crate::inverse::{direction_bounds, recommend, OptimizerConfig, Problem};
use crate::longitudinal::{assemble, rescore_vector, PipelineConfig, PipelineError, VisitModelBundle};

/// A cohort scaled with recommendation-half statistics, and its partition.
pub struct Study {
    pub cohort: LongitudinalCohort,
    pub partition: Partition,
}

impl Study {
    /// Partition the raw cohort and scale it with statistics from the
    /// recommendation half.
    pub fn prepare(raw: &LongitudinalCohort, plan: &EvaluationPlan) -> Result<Self, PipelineError> {
        plan.validate()?;
        let partition = Partition::assign(raw, plan);
        let scaler = fit_scaler(raw, &partition)?;
        Ok(Self {
            cohort: scaler.transform(raw)?,
            partition,
        })
    }

    pub fn context(&self, label: &str, config: PipelineConfig) -> Result<Context<'_>, PipelineError> {
        Context::train(label, &self.cohort, &self.partition, config)
    }
}

fn validated(outcomes: &[InstanceOutcome], budget: f64, f: impl Fn(&BudgetOutcome) -> Option<f64>) -> Vec<f64> {
    outcomes
        .iter()
        .filter_map(|o| o.at_budget(budget).and_then(&f))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Row {
    pub visit: u32,
    pub original: Summary,
    pub optimized_same_u: Summary,
    pub optimized_next_u: Summary,
    /// Mean `|next − same|` over instances present at the next visit.
    pub mean_abs_next_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Report {
    pub budget: f64,
    pub rows: Vec<Exp1Row>,
    pub runs: Vec<VisitRun>,
}

impl Exp1Report {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "visit",
            "n",
            "original_mean",
            "original_quarter_std",
            "optimized_same_u_mean",
            "optimized_same_u_quarter_std",
            "n_next",
            "optimized_next_u_mean",
            "optimized_next_u_quarter_std",
            "mean_abs_next_gap",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.visit.to_string(),
                r.original.n.to_string(),
                fmt_f64(r.original.mean),
                fmt_f64(r.original.quarter_std),
                fmt_f64(r.optimized_same_u.mean),
                fmt_f64(r.optimized_same_u.quarter_std),
                r.optimized_next_u.n.to_string(),
                fmt_f64(r.optimized_next_u.mean),
                fmt_f64(r.optimized_next_u.quarter_std),
                fmt_f64(r.mean_abs_next_gap),
            ]);
        }
        t
    }

    pub fn plot(&self) -> Table {
        let mut pts = Vec::new();
        for r in &self.rows {
            pts.push(PlotPoint::new("original", r.visit, r.original));
            pts.push(PlotPoint::new("optimized_same_u", r.visit, r.optimized_same_u));
            pts.push(PlotPoint::new("optimized_next_u", r.visit, r.optimized_next_u));
        }
        plot_table(&pts)
    }

    pub fn sweep(&self) -> SweepReport {
        SweepReport::from_runs(&self.runs)
    }

    pub fn fold_records(&self) -> Vec<FoldRecord> {
        self.runs.iter().flat_map(|r| r.folds.iter().cloned()).collect()
    }
}

/// Row of an experiment-1 report from a finished visit run.
pub fn exp1_row(run: &VisitRun, budget: f64) -> Exp1Row {
    let gaps: Vec<f64> = validated(&run.outcomes, budget, |b| {
        b.validated_next.map(|n| (n - b.validated_optimized).abs())
    });
    Exp1Row {
        visit: run.visit,
        original: Summary::of(&validated(&run.outcomes, budget, |b| Some(b.validated_original))),
        optimized_same_u: Summary::of(&validated(&run.outcomes, budget, |b| Some(b.validated_optimized))),
        optimized_next_u: Summary::of(&validated(&run.outcomes, budget, |b| b.validated_next)),
        mean_abs_next_gap: crate::metrics::mean(&gaps),
    }
}

/// Original, optimized and next-visit re-scored validated probabilities at
/// each planned visit.
pub fn experiment_1(ctx: &Context, plan: &EvaluationPlan, opt: &OptimizerConfig) -> Result<Exp1Report, PipelineError> {
    let mut runs = Vec::new();
    for &v in &plan.visits {
        runs.push(run_partition_protocol(ctx, v, plan, opt)?);
    }
    Ok(Exp1Report {
        budget: plan.budget,
        rows: runs.iter().map(|r| exp1_row(r, plan.budget)).collect(),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub visit: u32,
    pub budget: f64,
    pub validated_optimized: Summary,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn from_runs(runs: &[VisitRun]) -> Self {
        let mut rows = Vec::new();
        for run in runs {
            let mut budgets: Vec<f64> = run
                .outcomes
                .iter()
                .flat_map(|o| o.budgets.iter().map(|b| b.budget))
                .collect();
            budgets.sort_by(f64::total_cmp);
            budgets.dedup();
            for b in budgets {
                let costs = validated(&run.outcomes, b, |o| Some(o.recommendation.cost));
                rows.push(SweepRow {
                    visit: run.visit,
                    budget: b,
                    validated_optimized: Summary::of(&validated(&run.outcomes, b, |o| Some(o.validated_optimized))),
                    mean_cost: crate::metrics::mean(&costs),
                });
            }
        }
        Self { rows }
    }

    /// Whether the mean validated optimized probability never rises with
    /// the budget at any visit.
    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .filter(|w| w[0].visit == w[1].visit)
            .all(|w| w[1].validated_optimized.mean <= w[0].validated_optimized.mean)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["visit", "budget", "n", "mean", "quarter_std", "mean_cost"]);
        for r in &self.rows {
            t.push(vec![
                r.visit.to_string(),
                fmt_f64(r.budget),
                r.validated_optimized.n.to_string(),
                fmt_f64(r.validated_optimized.mean),
                fmt_f64(r.validated_optimized.quarter_std),
                fmt_f64(r.mean_cost),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskComparison {
    pub visit: u32,
    pub augmented: Summary,
    pub plain: Summary,
}

/// Per-instance validated probabilities along the carried chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriedInstance {
    pub id: String,
    pub fold: usize,
    /// Visit-2 instance as observed.
    pub p0: f64,
    /// Visit-2 instance with the visit-1 recommended change applied.
    pub p1: f64,
    /// After re-optimizing from the carried state.
    pub p2: f64,
    /// Re-optimized instance with visit-3 immutable values.
    pub p3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Report {
    pub budget: f64,
    pub risk: Vec<RiskComparison>,
    /// Optimize at visit 2 with past risk, re-score at visit 3.
    pub chain_a: Vec<PlotPoint>,
    /// Optimize at visit 1, apply the change at visit 2, re-optimize,
    /// re-score at visit 3.
    pub chain_b: Vec<PlotPoint>,
    pub carried: Vec<CarriedInstance>,
    /// Mean reduction from the first optimization.
    pub delta_first: f64,
    /// Mean additional reduction from the second optimization.
    pub delta_second: f64,
    pub folds: Vec<FoldRecord>,
}

impl Exp2Report {
    pub fn risk_table(&self) -> Table {
        let mut t = Table::new(&[
            "visit",
            "n",
            "augmented_mean",
            "augmented_quarter_std",
            "plain_mean",
            "plain_quarter_std",
        ]);
        for r in &self.risk {
            t.push(vec![
                r.visit.to_string(),
                r.augmented.n.to_string(),
                fmt_f64(r.augmented.mean),
                fmt_f64(r.augmented.quarter_std),
                fmt_f64(r.plain.mean),
                fmt_f64(r.plain.quarter_std),
            ]);
        }
        t
    }

    pub fn plot(&self) -> Table {
        let mut pts = Vec::new();
        for r in &self.risk {
            pts.push(PlotPoint::new("risk_augmented", r.visit, r.augmented));
            pts.push(PlotPoint::new("plain", r.visit, r.plain));
        }
        pts.extend(self.chain_a.iter().cloned());
        pts.extend(self.chain_b.iter().cloned());
        plot_table(&pts)
    }

    pub fn deltas_table(&self) -> Table {
        let mut t = Table::new(&["quantity", "value"]);
        t.push(vec!["delta_first".into(), fmt_f64(self.delta_first)]);
        t.push(vec!["delta_second".into(), fmt_f64(self.delta_second)]);
        t
    }
}

/// `x` with its direct block replaced by `direct` and its indirect block
/// re-estimated by the bundle's estimator.
pub fn with_direct(bundle: &VisitModelBundle, x: &[f64], direct: &[f64]) -> Result<Vec<f64>, PipelineError> {
    let schema = &bundle.augmented_schema;
    let d_idx = schema.indices(Role::Direct);
    if x.len() != schema.len() || direct.len() != d_idx.len() {
        return Err(PipelineError::Invalid("vector width does not match the bundle".into()));
    }
    let mut out = x.to_vec();
    for (&j, &v) in d_idx.iter().zip(direct) {
        out[j] = v;
    }
    if let Some(phi) = &bundle.phi {
        let u: Vec<f64> = schema.indices(Role::Immutable).iter().map(|&j| out[j]).collect();
        for (&j, v) in schema.indices(Role::Indirect).iter().zip(phi.estimate(&u, direct)?) {
            out[j] = v;
        }
    }
    Ok(out)
}

/// `observed + change`, kept within the widest bounds any direction allows
/// at `observed`.
pub fn apply_change(observed: &[f64], change: &[f64]) -> Vec<f64> {
    observed
        .iter()
        .zip(change)
        .map(|(&o, &d)| {
            let (lo, hi) = direction_bounds(Direction::Free, o);
            (o + d).clamp(lo, hi)
        })
        .collect()
}

/// The sequential chain: recommend at visit 1, apply the recommended change
/// to the id's observed visit-2 direct values (keeping its observed past
/// risk), recommend again from there, and re-score with visit-3
/// immutables. Every stage is scored by the visit-2 validation model of
/// the id's fold.
pub fn carried_chain(ctx: &Context, budget: f64, opt: &OptimizerConfig) -> Result<Vec<CarriedInstance>, PipelineError> {
    let b1 = ctx.bundle(1)?;
    let b2 = ctx.bundle(2)?;
    let b3 = ctx.chain.get(2);
    ctx.prepare_validation(&[2])?;
    let reader = ctx.reader();
    let mut out = Vec::new();
    for fold in 0..ctx.partition.folds {
        let val = ctx.validation_classifier(2, fold)?;
        let ids: Vec<String> = ctx
            .scored_ids(2, fold)
            .into_iter()
            .filter(|id| reader.row(1, id).is_some())
            .collect();
        let part: Vec<CarriedInstance> = ids
            .par_iter()
            .map(|id| -> Result<CarriedInstance, PipelineError> {
                let x1 = assemble(&ctx.chain, &reader, 1, id)?;
                let r1 = recommend(
                    &Problem {
                        id,
                        visit: 1,
                        schema: &b1.augmented_schema,
                        x: &x1,
                        clf: &b1.classifier,
                        phi: b1.phi.as_ref(),
                    },
                    budget,
                    opt,
                )?;
                let x2 = assemble(&ctx.chain, &reader, 2, id)?;
                let own: Vec<f64> = b2.augmented_schema.indices(Role::Direct).iter().map(|&j| x2[j]).collect();
                let start = with_direct(b2, &x2, &own)?;
                let change: Vec<f64> = b1
                    .augmented_schema
                    .indices(Role::Direct)
                    .iter()
                    .map(|&j| r1.deltas[j])
                    .collect();
                let carried = with_direct(b2, &x2, &apply_change(&own, &change))?;
                let r2 = recommend(
                    &Problem {
                        id,
                        visit: 2,
                        schema: &b2.augmented_schema,
                        x: &carried,
                        clf: &b2.classifier,
                        phi: b2.phi.as_ref(),
                    },
                    budget,
                    opt,
                )?;
                let p3 = match b3 {
                    Some(nb) if reader.row(3, id).is_some() => {
                        let base = nb.preprocessor.base_vector(&reader, id)?;
                        Some(val.predict_proba(&rescore_vector(b2, &r2.optimized, &base)?)?)
                    }
                    _ => None,
                };
                Ok(CarriedInstance {
                    id: id.clone(),
                    fold,
                    p0: val.predict_proba(&start)?,
                    p1: val.predict_proba(&carried)?,
                    p2: val.predict_proba(&r2.optimized)?,
                    p3,
                })
            })
            .collect::<Result<_, _>>()?;
        out.extend(part);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Past-risk comparison and the two sequential chains. `chain_a` may pass
/// an already computed visit-2 run of the augmented context.
pub fn experiment_2(
    augmented: &Context,
    plain: &Context,
    plan: &EvaluationPlan,
    opt: &OptimizerConfig,
    chain_a: Option<&VisitRun>,
) -> Result<Exp2Report, PipelineError> {
    plan.validate()?;
    let n = augmented.cohort.n_visits();
    if n < 3 {
        return Err(PipelineError::Invalid("the sequential experiment needs three visits".into()));
    }
    let mut folds = Vec::new();
    let mut risk = Vec::new();
    for v in [2, 3] {
        augmented.prepare_validation(&[v])?;
        plain.prepare_validation(&[v])?;
        let a: Vec<f64> = augmented.validated_observed(v)?.into_iter().map(|(_, p)| p).collect();
        let p: Vec<f64> = plain.validated_observed(v)?.into_iter().map(|(_, p)| p).collect();
        risk.push(RiskComparison {
            visit: v,
            augmented: Summary::of(&a),
            plain: Summary::of(&p),
        });
        for f in 0..augmented.partition.folds {
            folds.push(augmented.fold_record(v, f)?);
            folds.push(plain.fold_record(v, f)?);
        }
    }

    let owned;
    let run_a = match chain_a {
        Some(r) if r.visit == 2 => r,
        _ => {
            owned = run_partition_protocol(augmented, 2, plan, opt)?;
            &owned
        }
    };
    folds.extend(run_a.folds.iter().cloned());
    let b = plan.budget;
    let chain_a = vec![
        PlotPoint::new(
            "chain_a",
            "v2_original",
            Summary::of(&validated(&run_a.outcomes, b, |o| Some(o.validated_original))),
        ),
        PlotPoint::new(
            "chain_a",
            "v2_optimized",
            Summary::of(&validated(&run_a.outcomes, b, |o| Some(o.validated_optimized))),
        ),
        PlotPoint::new(
            "chain_a",
            "v3_rescored",
            Summary::of(&validated(&run_a.outcomes, b, |o| o.validated_next)),
        ),
    ];

    let carried = carried_chain(augmented, b, opt)?;
    let col = |f: fn(&CarriedInstance) -> Option<f64>| -> Vec<f64> { carried.iter().filter_map(f).collect() };
    let p0 = col(|c| Some(c.p0));
    let p1 = col(|c| Some(c.p1));
    let p2 = col(|c| Some(c.p2));
    let p3 = col(|c| c.p3);
    let chain_b = vec![
        PlotPoint::new("chain_b", "v2_original", Summary::of(&p0)),
        PlotPoint::new("chain_b", "v2_carried", Summary::of(&p1)),
        PlotPoint::new("chain_b", "v2_reoptimized", Summary::of(&p2)),
        PlotPoint::new("chain_b", "v3_rescored", Summary::of(&p3)),
    ];
    let m = crate::metrics::mean;
    Ok(Exp2Report {
        budget: b,
        risk,
        chain_a,
        chain_b,
        delta_first: m(&p0) - m(&p1),
        delta_second: m(&p1) - m(&p2),
        carried,
        folds,
    })
}

/// Imputer comparison on features known at visit 2, with carry-forward as
/// the baseline.
pub fn experiment_3(
    cohort: &LongitudinalCohort,
    plan: &EvaluationPlan,
    params: &ImputerParams,
) -> Result<ImputeComparison, PipelineError> {
    let targets: Vec<String> = IMPUTATION_TARGETS
        .iter()
        .filter(|t| cohort.schema().contains(t))
        .map(|t| t.to_string())
        .collect();
    Ok(compare_imputers(
        cohort,
        &targets,
        &ImputeMethod::ALL,
        plan.validation_folds,
        2,
        plan.seed,
        params,
    )?)
}
