use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"seed = 3

[data]
source = "synthetic"

[data.synthetic]
n_samples = 600

[ga]
population_size = 4
generations = 2
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascadeforge"))
        .args(args)
        .env("CASCADEFORGE_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn config(dir: &TempDir, extra: &str) -> PathBuf {
    let path = dir.path().join("experiment.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_data_writes_the_requested_class_balance() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("nested/b.csv");
    for path in [&a, &b] {
        ok(&[
            "gen-data",
            "--output",
            s(path),
            "--n-samples",
            "1000",
            "--positive-fraction",
            "0.1",
            "--seed",
            "4",
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let mut reader = csv::Reader::from_path(&a).unwrap();
    let label = reader.headers().unwrap().iter().position(|h| h == "label").unwrap();
    let labels: Vec<String> = reader.records().map(|r| r.unwrap()[label].to_string()).collect();
    assert_eq!(labels.len(), 1000);
    assert_eq!(labels.iter().filter(|l| *l == "1").count(), 100);
}

#[test]
fn compare_reports_one_row_per_strategy() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "");
    let out = dir.path().join("run");
    let stdout = ok(&["--config", s(&cfg), "--out", s(&out), "compare"]).stdout;
    let rows = csv_rows(&out.join("comparison.csv"));
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["independent", "sequential", "feedback"]);
    assert_eq!(
        String::from_utf8(stdout).unwrap(),
        fs::read_to_string(out.join("comparison.txt")).unwrap()
    );
    for name in &names {
        assert!(out.join("pipelines").join(name).join("pipeline.toml").exists());
        assert!(out.join("reports").join(format!("{name}.val.json")).exists());
    }
    assert!(out.join("config.toml").exists());
}

#[test]
fn sweep_covers_every_pass_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "\n[experiment]\nstrategies = [\"independent\", \"feedback\"]\n");
    let out = dir.path().join("sweep");
    ok(&["--config", s(&cfg), "--out", s(&out), "sweep-passrate"]);
    let text = fs::read_to_string(out.join("sweep.txt")).unwrap();
    assert_eq!(text.matches("== pass rate").count(), 4);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 1 + 4 * 2);
    for rate in ["0.2000", "0.3000", "0.4000", "0.5000"] {
        assert!(out.join(format!("rate-{rate}")).join("comparison.csv").exists());
    }
}

#[test]
fn fewshot_at_full_data_matches_compare() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "\n[experiment]\nstrategies = [\"independent\", \"feedback\"]\nfewshot_fractions = [0.1, 1.0]\n",
    );
    let few = dir.path().join("few");
    let cmp = dir.path().join("cmp");
    ok(&["--config", s(&cfg), "--out", s(&few), "fewshot"]);
    ok(&["--config", s(&cfg), "--out", s(&cmp), "compare"]);

    let rows = csv_rows(&few.join("fewshot.csv"));
    let header = &rows[0];
    assert_eq!(rows.len(), 1 + 2 * 2);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let full: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[0] == "1.0000").collect();
    assert_eq!(full.len(), 2);

    let compare = csv_rows(&cmp.join("comparison.csv"));
    let ccol = |name: &str| compare[0].iter().position(|h| h == name).unwrap();
    for row in full {
        let matching = compare.iter().find(|c| c[0] == row[col("strategy")]).unwrap();
        assert_eq!(row[col("F1_e2e")], matching[ccol("F1_e2e")]);
        assert_eq!(row[col("F1_e2e_val")], matching[ccol("F1_e2e_val")]);
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(few.join("fewshot.json")).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn fewshot_reports_failed_fractions_and_keeps_going() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "\n[experiment]\nstrategies = [\"independent\", \"feedback\"]\nfewshot_fractions = [0.001, 0.2]\n",
    );
    let out = dir.path().join("few");
    let result = run(&["--config", s(&cfg), "--out", s(&out), "fewshot"]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("fraction 0.001"));
    let rows = csv_rows(&out.join("fewshot.csv"));
    assert_eq!(rows.len(), 1 + 2);
    assert!(rows[1..].iter().all(|r| r[0] == "0.2000"));
}

#[test]
fn evaluate_round_trips_a_trained_pipeline() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "");
    let out = dir.path().join("train");
    let data = dir.path().join("data.csv");
    ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "train",
        "--strategy",
        "independent",
    ]);
    ok(&["gen-data", "--output", s(&data), "--n-samples", "300", "--seed", "8"]);

    let pipeline = out.join("pipelines/independent");
    let stdout = ok(&["evaluate", "--pipeline", s(&pipeline), "--data", s(&data)]).stdout;
    let report: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(report["n_samples"], 300);
    assert_eq!(report["split"], "data");
    let f1 = report["f1_e2e"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let saved = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--pipeline",
        s(&pipeline),
        "--data",
        s(&data),
        "--out",
        s(&saved),
    ]);
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(saved.join("report.json")).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn invalid_inputs_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let bad_key = dir.path().join("bad.toml");
    fs::write(&bad_key, "[data]\nsource = \"synthetic\"\nbogus = 1\n").unwrap();
    let bad_rate = config(&dir, "\n[experiment]\ntarget_pass_rate = 1.5\n");
    let cases: Vec<Vec<&str>> = vec![
        vec!["compare"],
        vec!["--config", s(&bad_key), "compare"],
        vec!["--config", s(&bad_rate), "compare"],
        vec!["--threads", "0", "--config", s(&bad_rate), "compare"],
        vec!["--config", "/nonexistent/experiment.toml", "compare"],
        vec!["gen-data", "--output", "/dev/null/x.csv", "--dim-shared", "0"],
        vec!["evaluate", "--pipeline", "/nonexistent", "--data", "/nonexistent.csv"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{args:?}");
    }
    assert_ne!(run(&["train", "--strategy", "joint"]).status.code(), Some(0));
}
