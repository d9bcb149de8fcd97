//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use longic::classifier::{train_svm, SvmParams};
use longic::data::Role;
use longic::experiments::{
    experiment_1, experiment_2, experiment_3, generate_cohort, Context, EvaluationPlan, Exp1Report, Exp2Report,
    GeneratorSpec, Study, LINEAR_TARGET, LOGISTIC_TARGET, RANDOM_WALK_TARGET,
};
use longic::impute::{ImputeMethod, ImputerParams};
use longic::inverse::{FeasibleRegion, OptimizerConfig};
use longic::longitudinal::{training_rows, PipelineConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, started: Instant, o: Outcome) -> bool {
    println!(
        "criterion {n} {}: {} ({}; {:.1}s)",
        name,
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let r = gradient_suite(500, 101);
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: r.proba <= 1e-5 && r.jacobian <= 1e-5 && r.objective <= 1e-5 && secs < 60.0,
        detail: format!(
            "{} configs, max abs error grad_proba {:.2e}, jacobian {:.2e}, objective_grad {:.2e}",
            r.cases, r.proba, r.jacobian, r.objective
        ),
    }
}

fn projection() -> Outcome {
    let t = Instant::now();
    let r = projection_suite(200, 102);
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: r.lattice <= 2e-3 && r.idempotence <= 1e-10 && r.infeasible == 0 && secs < 120.0,
        detail: format!(
            "{} regions, max lattice gap {:.2e}, max idempotence gap {:.2e}, infeasible {}",
            r.cases, r.lattice, r.idempotence, r.infeasible
        ),
    }
}

fn svm(ctx: &Context) -> Outcome {
    let r = svm_suite(30, 103);
    let mut rng = rng(104);
    let (x, y) = two_moons(&mut rng, 300, 0.1);
    let m = train_svm(&x, &y, &SvmParams::new(10.0, 0.3)).unwrap();
    let correct = (0..x.rows())
        .filter(|&i| (m.decision_value(x.row(i)).unwrap() > 0.0) == y[i])
        .count();
    let acc = correct as f64 / x.rows() as f64;
    let mut kkt = r.max_kkt.max(m.kkt_violation(&x, &y));
    // Visit models of the default cohort, on their own training rows.
    let reader = ctx.reader();
    for b in &ctx.chain {
        let (xt, yt, _) = training_rows(
            &reader,
            &ctx.chain[..b.v as usize - 1],
            &b.preprocessor,
            b.use_risk,
            b.v,
            &b.training_ids,
        )
        .unwrap();
        kkt = kkt.max(b.classifier.svm.kkt_violation(&xt, &yt));
    }
    Outcome {
        pass: r.max_relative_gap <= 1e-4 && kkt <= 1e-3 && acc >= 0.95,
        detail: format!(
            "dual gap {:.2e} over {} problems, max KKT {:.2e}, two-moons accuracy {:.3}",
            r.max_relative_gap, r.problems, kkt, acc
        ),
    }
}

fn optimizer_contract(ctx: &Context, e1: &Exp1Report) -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for run in &e1.runs {
        let schema = &ctx.chain[run.visit as usize - 1].augmented_schema;
        let fixed: Vec<usize> = schema
            .indices(Role::Immutable)
            .into_iter()
            .collect();
        for o in &run.outcomes {
            for b in &o.budgets {
                let r = &b.recommendation;
                checked += 1;
                let region = FeasibleRegion::from_schema(schema, &r.original, r.budget).unwrap();
                let d = r.optimized_direct(schema);
                let in_box = d
                    .iter()
                    .enumerate()
                    .all(|(j, &v)| region.lower[j] <= v && v <= region.upper[j]);
                let trace_ok = r.trace.windows(2).all(|w| w[1] <= w[0]);
                let ok = region.cost(&d) <= r.budget + 1e-8
                    && r.cost <= r.budget + 1e-8
                    && in_box
                    && trace_ok
                    && r.prob_optimized <= r.prob_original
                    && fixed.iter().all(|&j| r.optimized[j] == r.observed[j]);
                if !ok && failures.len() < 3 {
                    failures.push(format!("{} v{} B={}", r.id, r.visit, r.budget));
                }
            }
        }
    }
    let sweep = e1.sweep();
    let monotone = sweep.is_monotone();
    Outcome {
        pass: failures.is_empty() && monotone,
        detail: format!(
            "{checked} recommendations checked, violations {:?}, sweep monotone {monotone}",
            failures
        ),
    }
}

fn experiment1(e1: &Exp1Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &e1.rows {
        pass &= r.optimized_same_u.mean < r.original.mean && r.mean_abs_next_gap > 0.0;
        parts.push(format!(
            "v{}: original {:.5} -> optimized {:.5}, next-visit gap {:.5}",
            r.visit, r.original.mean, r.optimized_same_u.mean, r.mean_abs_next_gap
        ));
    }
    pass &= e1.rows.iter().map(|r| r.visit).collect::<Vec<_>>() == vec![1, 2];
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn experiment2(e2: &Exp2Report) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &e2.risk {
        pass &= r.augmented.mean < r.plain.mean;
        parts.push(format!(
            "v{}: augmented {:.5} vs plain {:.5}",
            r.visit, r.augmented.mean, r.plain.mean
        ));
    }
    pass &= e2.delta_second < e2.delta_first;
    parts.push(format!(
        "first reduction {:.5}, second reduction {:.5}",
        e2.delta_first, e2.delta_second
    ));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn experiment3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let plan = EvaluationPlan {
            seed,
            ..EvaluationPlan::default()
        };
        let raw = generate_cohort(&GeneratorSpec::default(), seed).unwrap();
        let s = Study::prepare(&raw, &plan).unwrap();
        let cmp = experiment_3(&s.cohort, &plan, &ImputerParams::default()).unwrap();
        let v = |f: &str, m: ImputeMethod| cmp.value(f, m).unwrap_or(f64::NAN);
        let linear = v(LINEAR_TARGET, ImputeMethod::Ridge) < v(LINEAR_TARGET, ImputeMethod::CarryForward);
        let logistic = v(LOGISTIC_TARGET, ImputeMethod::Logistic) > v(LOGISTIC_TARGET, ImputeMethod::CarryForward);
        let cf = v(RANDOM_WALK_TARGET, ImputeMethod::CarryForward);
        let walk = ImputeMethod::ALL
            .iter()
            .filter(|m| **m != ImputeMethod::CarryForward)
            .filter_map(|m| cmp.value(RANDOM_WALK_TARGET, *m))
            .all(|x| cf < x);
        pass &= linear && logistic && walk;
        parts.push(format!("seed {seed}: {linear}/{logistic}/{walk}"));
    }
    Outcome {
        pass,
        detail: format!("ridge<cf / logistic>cf / cf smallest: {}", parts.join(", ")),
    }
}

const SMALL_CONFIG: &str = r#"
[generator]
n_patients = 240
event_rate = 0.1

[plan]
validation_folds = 3
budgets = [0.5, 1.0]

[pipeline.classifier]
c = 1.0
sigma = 1.0

[pipeline.indirect]
sigma = 0.3
"#;

fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("config.toml");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let cohort = d.join("cohort");
    let models = d.join("models");
    let run = |args: &[String], out: &Path| -> bool {
        Command::new(env!("CARGO_BIN_EXE_longic"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--seed")
            .arg("9")
            .arg("--out")
            .arg(out)
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    };
    let s = |x: &str| x.to_string();
    let p = |x: &Path| x.to_string_lossy().into_owned();
    let ok = run(&[s("generate")], &cohort) && run(&[s("train"), s("--cohort"), p(&cohort)], &models);
    if !ok {
        return Outcome {
            pass: false,
            detail: "setup commands failed".into(),
        };
    }
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("generate", vec![s("generate")]),
        ("train", vec![s("train"), s("--cohort"), p(&cohort)]),
        (
            "recommend",
            vec![s("recommend"), s("--cohort"), p(&cohort), s("--models"), p(&models), s("--visit"), s("2")],
        ),
        ("exp1", vec![s("exp1"), s("--cohort"), p(&cohort)]),
        ("exp2", vec![s("exp2"), s("--cohort"), p(&cohort)]),
        ("exp3", vec![s("exp3"), s("--cohort"), p(&cohort)]),
        ("impute-bench", vec![s("impute-bench"), s("--cohort"), p(&cohort)]),
    ];
    let mut differing = Vec::new();
    for (name, args) in &commands {
        let a = d.join(format!("{name}_a"));
        let b = d.join(format!("{name}_b"));
        let same = run(args, &a) && run(args, &b) && {
            let (x, y) = (csv_outputs(&a), csv_outputs(&b));
            !x.is_empty() && x == y
        };
        if !same {
            differing.push(*name);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!("{} subcommands run twice, differing {:?}", commands.len(), differing),
    }
}

fn leakage(ctxs: &[&Context], e1: &Exp1Report, e2: &Exp2Report) -> Outcome {
    let folds: Vec<_> = e1.fold_records().into_iter().chain(e2.folds.iter().cloned()).collect();
    let dirty = folds.iter().filter(|f| !f.is_clean()).count();
    let access_ok = ctxs
        .iter()
        .flat_map(|c| c.access.iter())
        .all(|a| a.max_visit_read == a.visit);
    Outcome {
        pass: dirty == 0 && access_ok && !folds.is_empty(),
        detail: format!(
            "{} fold records, {dirty} with overlap, training reads stay within their visit {access_ok}",
            folds.len()
        ),
    }
}

fn main() -> ExitCode {
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "gradients", t, gradients());
    let t = Instant::now();
    all &= report(2, "projection", t, projection());

    let t = Instant::now();
    let plan = EvaluationPlan::default();
    let opt = OptimizerConfig::default();
    let raw = generate_cohort(&GeneratorSpec::default(), plan.seed).unwrap();
    let study = Study::prepare(&raw, &plan).unwrap();
    let aug = study
        .context(
            "augmented",
            PipelineConfig {
                use_risk: true,
                ..PipelineConfig::default()
            },
        )
        .unwrap();
    let e1 = experiment_1(&aug, &plan, &opt).unwrap();
    println!("default cohort experiment 1 finished in {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    all &= report(3, "svm", t, svm(&aug));
    let t = Instant::now();
    all &= report(4, "optimizer contract", t, optimizer_contract(&aug, &e1));
    let t = Instant::now();
    all &= report(5, "experiment 1", t, experiment1(&e1));

    let t = Instant::now();
    let plain = study
        .context(
            "plain",
            PipelineConfig {
                use_risk: false,
                ..PipelineConfig::default()
            },
        )
        .unwrap();
    let chain_a = e1.runs.iter().find(|r| r.visit == 2);
    let e2 = experiment_2(&aug, &plain, &plan, &opt, chain_a).unwrap();
    all &= report(6, "experiment 2", t, experiment2(&e2));

    let t = Instant::now();
    all &= report(7, "experiment 3", t, experiment3());
    let t = Instant::now();
    all &= report(8, "determinism", t, determinism());
    let t = Instant::now();
    all &= report(9, "leakage", t, leakage(&[&aug, &plain], &e1, &e2));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
