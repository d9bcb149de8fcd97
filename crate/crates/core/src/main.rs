use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use longic::config::StudyConfig;
use longic::data::{load_cohort, save_cohort, LongitudinalCohort, Role};
use longic::experiments::{
    experiment_1, experiment_2, experiment_3, fit_scaler, fmt_f64, generate_cohort, AccessRecord, FoldRecord,
    Partition, Study, Table, IMPUTATION_TARGETS,
};
use longic::impute::{compare_imputers, ImputeComparison, ImputeMethod};
use longic::inverse::{recommend, Problem};
use longic::longitudinal::{assemble, load_chain, rescore_vector, save_chain, train_chain, CohortReader};

#[derive(Parser)]
#[command(name = "longic", version, about = "Longitudinal inverse classification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator and partition seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the headline budget.
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CohortArg {
    /// Cohort directory with `visitN.csv` files and `schema.json`; a cohort
    /// is generated from the configuration when omitted.
    #[arg(long)]
    cohort: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Generate,
    /// Train the visit chain on the recommendation half.
    Train(CohortArg),
    /// Recommend changes for the evaluation half at one visit.
    Recommend {
        #[command(flatten)]
        cohort: CohortArg,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 1)]
        visit: u32,
    },
    /// Validated probabilities before and after optimization.
    Exp1(CohortArg),
    /// Past-risk comparison and sequential optimization.
    Exp2(CohortArg),
    /// Imputers against carry-forward on the built-in targets.
    Exp3(CohortArg),
    /// Imputer comparison on chosen features.
    ImputeBench {
        #[command(flatten)]
        cohort: CohortArg,
        /// Feature to mask and impute; repeatable.
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Visit whose values are masked.
        #[arg(long, default_value_t = 2)]
        visit: u32,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.common.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    }
    .with_overrides(cli.common.seed, cli.common.budget);
    let out = &cli.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Generate => generate(&cfg, out),
        Command::Train(c) => train(&cfg, c, out),
        Command::Recommend { cohort, models, visit } => recommend_cmd(&cfg, cohort, models, *visit, out),
        Command::Exp1(c) => exp1(&cfg, c, out),
        Command::Exp2(c) => exp2(&cfg, c, out),
        Command::Exp3(c) => exp3(&cfg, c, out),
        Command::ImputeBench { cohort, targets, visit } => impute_bench(&cfg, cohort, targets, *visit, out),
    }
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write(out: &Path, name: &str, table: &Table) -> Result<()> {
    write_text(out, name, &table.to_csv())
}

fn raw_cohort(cfg: &StudyConfig, arg: &CohortArg) -> Result<LongitudinalCohort> {
    match &arg.cohort {
        Some(dir) => Ok(load_cohort(dir, &dir.join("schema.json"))?),
        None => Ok(generate_cohort(&cfg.generator, cfg.plan.seed)?),
    }
}

fn generate(cfg: &StudyConfig, out: &Path) -> Result<()> {
    let cohort = generate_cohort(&cfg.generator, cfg.plan.seed)?;
    let partition = Partition::assign(&cohort, &cfg.plan);
    let scaler = fit_scaler(&cohort, &partition)?;
    save_cohort(&cohort, out, Some(&scaler))?;
    let mut t = Table::new(&["visit", "instances", "positives"]);
    for vd in cohort.visits() {
        t.push(vec![vd.v().to_string(), vd.len().to_string(), vd.positives().to_string()]);
    }
    write(out, "cohort_summary.csv", &t)
}

fn train(cfg: &StudyConfig, arg: &CohortArg, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let reader = CohortReader::new(&study.cohort);
    let chain = train_chain(
        &reader,
        study.cohort.n_visits(),
        &study.partition.recommendation,
        &cfg.pipeline,
    )?;
    let manifest = save_chain(&chain, out)?;
    let mut t = Table::new(&["visit", "file", "sha256", "c", "sigma", "training_ids"]);
    for (e, b) in manifest.bundles.iter().zip(&chain) {
        t.push(vec![
            e.visit.to_string(),
            e.file.clone(),
            e.sha256.clone(),
            fmt_f64(b.svm_params.c),
            fmt_f64(b.svm_params.sigma),
            b.training_ids.len().to_string(),
        ]);
    }
    write(out, "models.csv", &t)
}

fn recommend_cmd(cfg: &StudyConfig, arg: &CohortArg, models: &Path, v: u32, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let chain = load_chain(models)?;
    let Some(bundle) = chain.get(v.wrapping_sub(1) as usize) else {
        bail!("no model for visit {v} in {}", models.display());
    };
    if bundle.base_schema != *study.cohort.schema() {
        bail!("models in {} were trained on a different schema", models.display());
    }
    let reader = CohortReader::new(&study.cohort);
    let schema = &bundle.augmented_schema;
    let direct: Vec<usize> = schema.indices(Role::Direct);
    let mut header: Vec<String> = [
        "id",
        "budget",
        "cost",
        "prob_original",
        "prob_optimized",
        "prob_next_visit",
        "iterations",
        "converged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(direct.iter().map(|&j| format!("delta_{}", schema.feature(j).name)));
    let mut t = Table::new(&header);
    let present: std::collections::BTreeSet<String> = reader.ids_at(v).into_iter().collect();
    for id in study.partition.evaluation.iter().filter(|id| present.contains(*id)) {
        let x = assemble(&chain, &reader, v, id)?;
        let p = Problem {
            id,
            visit: v,
            schema,
            x: &x,
            clf: &bundle.classifier,
            phi: bundle.phi.as_ref(),
        };
        let mut r = recommend(&p, cfg.plan.budget, &cfg.optimizer)?;
        if let Some(nb) = chain.get(v as usize) {
            if reader.row(v + 1, id).is_some() {
                let xr = rescore_vector(bundle, &r.optimized, &nb.preprocessor.base_vector(&reader, id)?)?;
                r.prob_next_visit = Some(bundle.predict(&xr)?);
            }
        }
        let mut row = vec![
            r.id.clone(),
            fmt_f64(r.budget),
            fmt_f64(r.cost),
            fmt_f64(r.prob_original),
            fmt_f64(r.prob_optimized),
            r.prob_next_visit.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            r.iterations.to_string(),
            r.converged.to_string(),
        ];
        row.extend(direct.iter().map(|&j| fmt_f64(r.deltas[j])));
        t.push(row);
    }
    write(out, &format!("recommendations_v{v}.csv"), &t)
}

fn folds_table(records: &[FoldRecord]) -> Table {
    let mut t = Table::new(&[
        "model",
        "visit",
        "fold",
        "training_ids",
        "scored_ids",
        "validation_overlap",
        "recommendation_overlap",
    ]);
    for r in records {
        t.push(vec![
            r.label.clone(),
            r.visit.to_string(),
            r.fold.to_string(),
            r.training_ids.to_string(),
            r.scored_ids.to_string(),
            r.validation_overlap.to_string(),
            r.recommendation_overlap.to_string(),
        ]);
    }
    t
}

fn access_table(records: &[AccessRecord]) -> Table {
    let mut t = Table::new(&["model", "visit", "max_visit_read"]);
    for r in records {
        t.push(vec![r.label.clone(), r.visit.to_string(), r.max_visit_read.to_string()]);
    }
    t
}

fn check_clean(records: &[FoldRecord]) -> Result<()> {
    if let Some(r) = records.iter().find(|r| !r.is_clean()) {
        bail!(
            "{} visit {} fold {}: scored ids overlap training ids",
            r.label,
            r.visit,
            r.fold
        );
    }
    Ok(())
}

fn exp1(cfg: &StudyConfig, arg: &CohortArg, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let ctx = study.context("augmented", cfg.pipeline.clone())?;
    let report = experiment_1(&ctx, &cfg.plan, &cfg.optimizer)?;
    let folds = report.fold_records();
    check_clean(&folds)?;
    write(out, "exp1_table.csv", &report.table())?;
    write(out, "exp1_plot.csv", &report.plot())?;
    write(out, "budget_sweep.csv", &report.sweep().table())?;
    write(out, "exp1_folds.csv", &folds_table(&folds))?;
    write(out, "exp1_access.csv", &access_table(&ctx.access))
}

fn exp2(cfg: &StudyConfig, arg: &CohortArg, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let mut plain_cfg = cfg.pipeline.clone();
    plain_cfg.use_risk = false;
    let mut aug_cfg = cfg.pipeline.clone();
    aug_cfg.use_risk = true;
    let aug = study.context("augmented", aug_cfg)?;
    let plain = study.context("plain", plain_cfg)?;
    let report = experiment_2(&aug, &plain, &cfg.plan, &cfg.optimizer, None)?;
    check_clean(&report.folds)?;
    write(out, "exp2_risk.csv", &report.risk_table())?;
    write(out, "exp2_plot.csv", &report.plot())?;
    write(out, "exp2_deltas.csv", &report.deltas_table())?;
    write(out, "exp2_folds.csv", &folds_table(&report.folds))?;
    let access: Vec<AccessRecord> = aug.access.iter().chain(&plain.access).cloned().collect();
    write(out, "exp2_access.csv", &access_table(&access))
}

fn exp3(cfg: &StudyConfig, arg: &CohortArg, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let cmp = experiment_3(&study.cohort, &cfg.plan, &cfg.imputers)?;
    warn_skipped(&cmp);
    write_text(out, "exp3_table.csv", &cmp.to_csv())
}

fn warn_skipped(cmp: &ImputeComparison) {
    for c in cmp.cells.iter().filter(|c| c.skipped_folds > 0) {
        eprintln!(
            "note: {} for `{}` skipped {} fold(s) with no usable fit or score",
            c.method.name(),
            c.feature,
            c.skipped_folds
        );
    }
}

fn impute_bench(cfg: &StudyConfig, arg: &CohortArg, targets: &[String], v: u32, out: &Path) -> Result<()> {
    let study = Study::prepare(&raw_cohort(cfg, arg)?, &cfg.plan)?;
    let targets: Vec<String> = if targets.is_empty() {
        IMPUTATION_TARGETS
            .iter()
            .filter(|t| study.cohort.schema().contains(t))
            .map(|t| t.to_string())
            .collect()
    } else {
        targets.to_vec()
    };
    let cmp = compare_imputers(
        &study.cohort,
        &targets,
        &ImputeMethod::ALL,
        cfg.plan.validation_folds,
        v,
        cfg.plan.seed,
        &cfg.imputers,
    )?;
    warn_skipped(&cmp);
    write_text(out, &format!("impute_bench_v{v}.csv"), &cmp.to_csv())
}
