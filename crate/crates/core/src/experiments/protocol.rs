//! Two-level evaluation: a recommendation half trains the models that drive
//! the optimizer, and an evaluation half, split into folds, supplies both the
//! instances that receive recommendations and the independent validation
//! models that score them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_calibrated, CalibratedClassifier};
use crate::data::{LongitudinalCohort, MinMaxScaler};
use crate::inverse::{budget_sweep, OptimizerConfig, Problem, RecommendationResult};
use crate::longitudinal::{
    assemble, rescore_vector, train_visit_bundle, training_rows, AccessLog, CohortReader, PipelineConfig,
    PipelineError, VisitModelBundle,
};
use crate::seeding::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationPlan {
    pub seed: u64,
    pub recommendation_fraction: f64,
    pub validation_folds: usize,
    /// Budget used for the headline experiments.
    pub budget: f64,
    /// Budgets of the sweep report.
    pub budgets: Vec<f64>,
    /// Visits at which recommendations are made and re-scored.
    pub visits: Vec<u32>,
}

impl Default for EvaluationPlan {
    fn default() -> Self {
        Self {
            seed: 1,
            recommendation_fraction: 0.5,
            validation_folds: 10,
            budget: 1.0,
            budgets: vec![0.5, 1.0, 2.0],
            visits: vec![1, 2],
        }
    }
}

impl EvaluationPlan {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.recommendation_fraction > 0.0 && self.recommendation_fraction < 1.0) {
            return Err(PipelineError::Invalid(format!(
                "recommendation fraction {} outside (0, 1)",
                self.recommendation_fraction
            )));
        }
        if self.validation_folds < 2 {
            return Err(PipelineError::Invalid("at least two validation folds are required".into()));
        }
        if self.visits.contains(&0) {
            return Err(PipelineError::Invalid("visits are numbered from 1".into()));
        }
        if !(self.budget >= 0.0) || self.budgets.iter().any(|b| !(*b >= 0.0)) {
            return Err(PipelineError::Invalid("budgets must be nonnegative".into()));
        }
        Ok(())
    }

    /// Sorted, deduplicated budgets including the headline budget.
    pub fn sweep_budgets(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.budgets.iter().copied().chain([self.budget]).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Id-level assignment to the two halves and to evaluation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub recommendation: Vec<String>,
    pub evaluation: Vec<String>,
    /// Fold of every evaluation id.
    pub fold_of: BTreeMap<String, usize>,
    pub folds: usize,
}

impl Partition {
    /// Split ids stratified by the visit of their event (none counts as its
    /// own stratum). Within a stratum ids are ordered by a seeded hash, so
    /// the assignment is independent of row order.
    pub fn assign(cohort: &LongitudinalCohort, plan: &EvaluationPlan) -> Self {
        let mut strata: BTreeMap<u32, Vec<(u64, String)>> = BTreeMap::new();
        for id in cohort.all_ids() {
            let s = cohort.event_visit(&id).unwrap_or(0);
            strata
                .entry(s)
                .or_default()
                .push((stable_hash(plan.seed, &["partition", &id]), id));
        }
        let f = plan.recommendation_fraction;
        let mut recommendation = Vec::new();
        let mut evaluation = Vec::new();
        let mut fold_of = BTreeMap::new();
        let mut next_fold = 0;
        for (_, mut ids) in strata {
            ids.sort();
            let n_rec = (ids.len() as f64 * f).round() as usize;
            let (rec, eval) = ids.split_at(n_rec);
            recommendation.extend(rec.iter().map(|(_, id)| id.clone()));
            let mut eval: Vec<(u64, &String)> = eval
                .iter()
                .map(|(_, id)| (stable_hash(plan.seed, &["fold", id]), id))
                .collect();
            eval.sort();
            for (_, id) in eval {
                fold_of.insert(id.clone(), next_fold % plan.validation_folds);
                next_fold += 1;
                evaluation.push(id.clone());
            }
        }
        recommendation.sort();
        evaluation.sort();
        Self {
            recommendation,
            evaluation,
            fold_of,
            folds: plan.validation_folds,
        }
    }

    pub fn fold_ids(&self, fold: usize) -> Vec<String> {
        self.evaluation
            .iter()
            .filter(|id| self.fold_of[*id] == fold)
            .cloned()
            .collect()
    }

    pub fn outside_fold(&self, fold: usize) -> Vec<String> {
        self.evaluation
            .iter()
            .filter(|id| self.fold_of[*id] != fold)
            .cloned()
            .collect()
    }
}

/// Min-max statistics from the visit-1 rows of the recommendation half.
pub fn fit_scaler(cohort: &LongitudinalCohort, partition: &Partition) -> Result<MinMaxScaler, PipelineError> {
    let rec: BTreeSet<&str> = partition.recommendation.iter().map(String::as_str).collect();
    Ok(MinMaxScaler::fit(cohort, |id| rec.contains(id))?)
}

/// Which data a model was trained on and which ids it scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub label: String,
    pub visit: u32,
    pub fold: usize,
    pub training_ids: usize,
    pub scored_ids: usize,
    /// Scored ids that the validation model was trained on.
    pub validation_overlap: usize,
    /// Scored ids that the recommendation model was trained on.
    pub recommendation_overlap: usize,
}

impl FoldRecord {
    pub fn is_clean(&self) -> bool {
        self.validation_overlap == 0 && self.recommendation_overlap == 0
    }
}

/// Visits read while training each recommendation bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub label: String,
    pub visit: u32,
    pub max_visit_read: u32,
}

struct ValidationModel {
    clf: CalibratedClassifier,
    training_ids: Vec<String>,
}

/// A trained recommendation chain over a scaled cohort, with lazily trained
/// validation models.
pub struct Context<'a> {
    pub label: String,
    pub cohort: &'a LongitudinalCohort,
    pub partition: &'a Partition,
    pub config: PipelineConfig,
    pub chain: Vec<VisitModelBundle>,
    pub access: Vec<AccessRecord>,
    validation: Vec<Vec<OnceLock<Result<ValidationModel, String>>>>,
}

impl<'a> Context<'a> {
    /// Train the recommendation chain on the recommendation half, logging
    /// every visit read while fitting each visit's bundle.
    pub fn train(
        label: &str,
        cohort: &'a LongitudinalCohort,
        partition: &'a Partition,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        let mut chain: Vec<VisitModelBundle> = Vec::new();
        let mut access = Vec::new();
        for v in 1..=cohort.n_visits() {
            let log = AccessLog::new();
            let reader = CohortReader::logged(cohort, &log);
            let b = train_visit_bundle(&reader, v, &chain, &partition.recommendation, &config, None)?;
            access.push(AccessRecord {
                label: label.to_string(),
                visit: v,
                max_visit_read: log.max_visit().unwrap_or(0),
            });
            chain.push(b);
        }
        let validation = (0..cohort.n_visits())
            .map(|_| (0..partition.folds).map(|_| OnceLock::new()).collect())
            .collect();
        Ok(Self {
            label: label.to_string(),
            cohort,
            partition,
            config,
            chain,
            access,
            validation,
        })
    }

    pub fn reader(&self) -> CohortReader<'a> {
        CohortReader::new(self.cohort)
    }

    pub fn bundle(&self, v: u32) -> Result<&VisitModelBundle, PipelineError> {
        self.chain.get(v as usize - 1).ok_or(PipelineError::MissingBundle(v))
    }

    /// Validation classifier for `fold` at `v`: trained on the other
    /// evaluation folds' rows, with the recommendation model's
    /// hyperparameters and risk features from the recommendation chain.
    fn validation(&self, v: u32, fold: usize) -> Result<&ValidationModel, PipelineError> {
        let cell = self
            .validation
            .get(v as usize - 1)
            .and_then(|f| f.get(fold))
            .ok_or(PipelineError::MissingBundle(v))?;
        let res = cell.get_or_init(|| {
            let run = || -> Result<ValidationModel, PipelineError> {
                let b = self.bundle(v)?;
                let ids = self.partition.outside_fold(fold);
                let (x, y, used) = training_rows(
                    &self.reader(),
                    &self.chain[..v as usize - 1],
                    &b.preprocessor,
                    b.use_risk,
                    v,
                    &ids,
                )?;
                let clf = train_calibrated(&x, &y, &b.svm_params, self.config.classifier.platt_folds)?;
                Ok(ValidationModel { clf, training_ids: used })
            };
            run().map_err(|e| e.to_string())
        });
        res.as_ref()
            .map_err(|e| PipelineError::Invalid(format!("validation model for visit {v}, fold {fold}: {e}")))
    }

    /// Train every validation model for the given visits, in parallel.
    pub fn prepare_validation(&self, visits: &[u32]) -> Result<(), PipelineError> {
        let jobs: Vec<(u32, usize)> = visits
            .iter()
            .flat_map(|&v| (0..self.partition.folds).map(move |f| (v, f)))
            .collect();
        jobs.par_iter()
            .map(|&(v, f)| self.validation(v, f).map(|_| ()))
            .collect::<Result<Vec<()>, _>>()?;
        Ok(())
    }

    pub fn validation_classifier(&self, v: u32, fold: usize) -> Result<&CalibratedClassifier, PipelineError> {
        Ok(&self.validation(v, fold)?.clf)
    }

    /// Evaluation ids present at `v` in `fold`.
    pub fn scored_ids(&self, v: u32, fold: usize) -> Vec<String> {
        let present: BTreeSet<String> = self.reader().ids_at(v).into_iter().collect();
        self.partition
            .fold_ids(fold)
            .into_iter()
            .filter(|id| present.contains(id))
            .collect()
    }

    pub fn fold_record(&self, v: u32, fold: usize) -> Result<FoldRecord, PipelineError> {
        let vm = self.validation(v, fold)?;
        let scored: BTreeSet<String> = self.scored_ids(v, fold).into_iter().collect();
        let trained: BTreeSet<&String> = vm.training_ids.iter().collect();
        let rec: BTreeSet<&String> = self.bundle(v)?.training_ids.iter().collect();
        Ok(FoldRecord {
            label: self.label.clone(),
            visit: v,
            fold,
            training_ids: vm.training_ids.len(),
            scored_ids: scored.len(),
            validation_overlap: scored.iter().filter(|id| trained.contains(id)).count(),
            recommendation_overlap: scored.iter().filter(|id| rec.contains(id)).count(),
        })
    }

    /// Validated probability of each evaluation instance at `v` as observed.
    pub fn validated_observed(&self, v: u32) -> Result<Vec<(String, f64)>, PipelineError> {
        let mut out = Vec::new();
        for fold in 0..self.partition.folds {
            let clf = self.validation_classifier(v, fold)?;
            for id in self.scored_ids(v, fold) {
                let x = assemble(&self.chain, &self.reader(), v, &id)?;
                out.push((id, clf.predict_proba(&x)?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

/// One budget's outcome for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub budget: f64,
    pub validated_original: f64,
    pub validated_optimized: f64,
    /// Validated probability after swapping in the next visit's immutables;
    /// `None` when the id is absent at the next visit.
    pub validated_next: Option<f64>,
    pub recommendation: RecommendationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub visit: u32,
    pub fold: usize,
    pub budgets: Vec<BudgetOutcome>,
}

impl InstanceOutcome {
    pub fn at_budget(&self, b: f64) -> Option<&BudgetOutcome> {
        self.budgets.iter().find(|o| o.budget == b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRun {
    pub visit: u32,
    pub outcomes: Vec<InstanceOutcome>,
    pub folds: Vec<FoldRecord>,
}

/// Recommendations for every evaluation instance at `v`, each scored by
/// the validation model of its fold before and after optimization, and
/// after re-scoring with the next visit's immutable values.
pub fn run_partition_protocol(
    ctx: &Context,
    v: u32,
    plan: &EvaluationPlan,
    opt: &OptimizerConfig,
) -> Result<VisitRun, PipelineError> {
    plan.validate()?;
    let bundle = ctx.bundle(v)?;
    let next = ctx.chain.get(v as usize);
    let budgets = plan.sweep_budgets();
    ctx.prepare_validation(&[v])?;
    let reader = ctx.reader();
    let mut outcomes = Vec::new();
    let mut folds = Vec::new();
    for fold in 0..ctx.partition.folds {
        let val = ctx.validation_classifier(v, fold)?;
        let ids = ctx.scored_ids(v, fold);
        let part: Vec<InstanceOutcome> = ids
            .par_iter()
            .map(|id| -> Result<InstanceOutcome, PipelineError> {
                let x = assemble(&ctx.chain, &reader, v, id)?;
                let p = Problem {
                    id,
                    visit: v,
                    schema: &bundle.augmented_schema,
                    x: &x,
                    clf: &bundle.classifier,
                    phi: bundle.phi.as_ref(),
                };
                let next_base = match next {
                    Some(nb) if reader.row(v + 1, id).is_some() => Some(nb.preprocessor.base_vector(&reader, id)?),
                    _ => None,
                };
                let mut out = Vec::with_capacity(budgets.len());
                for mut r in budget_sweep(&p, &budgets, opt)? {
                    let validated_original = val.predict_proba(&r.original)?;
                    let validated_optimized = val.predict_proba(&r.optimized)?;
                    let validated_next = match &next_base {
                        Some(nb) => {
                            let xr = rescore_vector(bundle, &r.optimized, nb)?;
                            r.prob_next_visit = Some(bundle.predict(&xr)?);
                            Some(val.predict_proba(&xr)?)
                        }
                        None => None,
                    };
                    out.push(BudgetOutcome {
                        budget: r.budget,
                        validated_original,
                        validated_optimized,
                        validated_next,
                        recommendation: r,
                    });
                }
                Ok(InstanceOutcome {
                    id: id.clone(),
                    visit: v,
                    fold,
                    budgets: out,
                })
            })
            .collect::<Result<_, _>>()?;
        outcomes.extend(part);
        folds.push(ctx.fold_record(v, fold)?);
    }
    outcomes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(VisitRun {
        visit: v,
        outcomes,
        folds,
    })
}
