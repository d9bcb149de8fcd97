use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
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

fn run(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_longic"))
        .args(args)
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--seed")
        .arg("4")
        .status()
        .unwrap();
    assert!(status.success(), "longic {args:?} failed");
}

fn csv_files(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_train_recommend_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("config.toml"), CONFIG).unwrap();
    let cohort = d.join("cohort");
    let models = d.join("models");
    let recs = d.join("recs");
    run(d, &["generate", "--out", cohort.to_str().unwrap()]);
    assert!(cohort.join("schema.json").exists());
    assert!(cohort.join("visit3.csv").exists());
    run(d, &["train", "--cohort", cohort.to_str().unwrap(), "--out", models.to_str().unwrap()]);
    assert!(models.join("manifest.json").exists());
    run(
        d,
        &[
            "recommend",
            "--cohort",
            cohort.to_str().unwrap(),
            "--models",
            models.to_str().unwrap(),
            "--visit",
            "2",
            "--out",
            recs.to_str().unwrap(),
        ],
    );
    let text = fs::read_to_string(recs.join("recommendations_v2.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (cost, p0, p1) = (col("cost"), col("prob_original"), col("prob_optimized"));
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        assert!(f(cost) <= 1.0 + 1e-8);
        assert!(f(p1) <= f(p0) + 1e-12);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn tampered_models_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("config.toml"), CONFIG).unwrap();
    let models = d.join("models");
    run(d, &["train", "--out", models.to_str().unwrap()]);
    let bundle = models.join("bundle_v1.json");
    let text = fs::read_to_string(&bundle).unwrap();
    fs::write(&bundle, text.replacen("\"platt_a\":", "\"platt_a\": ", 1)).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_longic"))
        .args(["recommend", "--models", models.to_str().unwrap()])
        .arg("--config")
        .arg(d.join("config.toml"))
        .arg("--out")
        .arg(d.join("recs"))
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn experiment_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("config.toml"), CONFIG).unwrap();
    for cmd in ["exp3", "impute-bench"] {
        let a = d.join(format!("{cmd}_a"));
        let b = d.join(format!("{cmd}_b"));
        run(d, &[cmd, "--out", a.to_str().unwrap()]);
        run(d, &[cmd, "--out", b.to_str().unwrap()]);
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{cmd}");
    }
}

#[test]
fn unknown_config_keys_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("config.toml"), "[plan]\nsede = 3\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_longic"))
        .args(["generate", "--config"])
        .arg(d.join("config.toml"))
        .arg("--out")
        .arg(d.join("o"))
        .status()
        .unwrap();
    assert!(!status.success());
}
