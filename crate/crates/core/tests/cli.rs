//! Drives the `evaltalker` binary stage by stage.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use evaltalker::subjective::{write_ratings_csv, SubjectiveTable};
use evaltalker::synthetic::{reference_shaped_manifest, simulate_study, StudyConfig};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evaltalker"))
        .args(args)
        .current_dir(dir)
        .env_clear()
        .env("EVALTALKER_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stages_chain_from_ratings_to_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["e2e", "--out", "syn", "--sources", "20", "--generators", "3", "--epochs", "30", "--backend-sets", "oracle"],
    );
    ok(d, &["validate", "--manifest", "syn/manifest.jsonl", "--report", "validation.json"]);
    assert_eq!(read_json(&d.join("validation.json"))["findings"], serde_json::json!([]));

    ok(d, &["process", "--ratings", "syn/ratings.csv", "--out", "mos.csv", "--report", "report.json"]);
    let table = SubjectiveTable::read_csv(std::fs::File::open(d.join("mos.csv")).unwrap()).unwrap();
    assert_eq!(table.len(), 60);
    assert_eq!(
        std::fs::read(d.join("mos.csv")).unwrap(),
        std::fs::read(d.join("syn/mos.csv")).unwrap()
    );

    let folds = ok(d, &["folds", "--manifest", "syn/manifest.jsonl", "--k", "4", "--seed", "3"]);
    assert!(folds.contains("fold"), "{folds}");
    assert_eq!(read_json(&d.join("folds.json"))["k"], 4);

    ok(d, &["extract", "--manifest", "syn/manifest.jsonl", "--backend-set", "oracle", "--mos", "mos.csv"]);
    ok(d, &["train", "--features", "features", "--mos", "mos.csv", "--folds", "folds.json", "--epochs", "30"]);
    assert!(d.join("model/model.json").exists() && d.join("model/pred.csv").exists());

    ok(d, &["infer", "--features", "features", "--model", "model", "--out", "all.csv"]);
    let printed = ok(d, &["evaluate", "--pred", "model/pred.csv", "--mos", "mos.csv", "--folds", "folds.json"]);
    assert!(printed.contains("SRCC") || printed.contains("srcc"), "{printed}");
    let metrics = read_json(&d.join("metrics.json"));
    assert_eq!(metrics["folds"].as_array().unwrap().len(), 4);
    assert!(metrics["mean"]["srcc"].as_f64().unwrap() > 0.8, "{metrics}");

    ok(d, &["evaluate", "--pred", "model/pred.csv", "--mos", "mos.csv", "--folds", "folds.json", "--no-fit", "--out", "raw.json"]);
    assert_eq!(read_json(&d.join("raw.json"))["fitted"], false);
}

#[test]
fn evaluate_reports_uncovered_stimuli() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["e2e", "--out", "syn", "--sources", "15", "--generators", "2", "--epochs", "5", "--backend-sets", "stub"]);
    let pred = std::fs::read_to_string(d.join("syn/stub/pred.csv")).unwrap();
    let mut lines: Vec<&str> = pred.lines().collect();
    let dropped: Vec<String> = lines
        .drain(1..3)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    std::fs::write(d.join("partial.csv"), lines.join("\n") + "\n").unwrap();

    let out = run(
        d,
        &["evaluate", "--pred", "partial.csv", "--mos", "syn/mos.csv", "--folds", "syn/folds.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for id in &dropped {
        assert!(err.contains(id.as_str()), "{id} not in {err}");
    }
}

#[test]
fn missing_inputs_are_listed_together() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        &["train", "--features", "nope", "--mos", "gone.csv", "--folds", "absent.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for p in ["nope", "gone.csv", "absent.json"] {
        assert!(err.contains(p), "{p} not in {err}");
    }
    // A required flag that was never given is a usage error.
    let out = run(tmp.path(), &["evaluate", "--mos", "m.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--pred"));
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["e2e", "--out", "syn", "--sources", "15", "--generators", "2", "--epochs", "2", "--backend-sets", "stub"]);
    std::fs::write(d.join("run.toml"), "seed = 9\n[folds]\nk = 3\nout = \"f3.json\"\n").unwrap();
    ok(d, &["--config", "run.toml", "folds", "--manifest", "syn/manifest.jsonl", "--k", "2"]);
    let plan = read_json(&d.join("f3.json"));
    assert_eq!((plan["k"].as_u64(), plan["seed"].as_u64()), (Some(3), Some(9)));
}

#[test]
fn process_handles_the_reference_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let set = reference_shaped_manifest(1);
    let study = simulate_study(
        &set,
        &StudyConfig {
            raters: 40,
            seed: 1,
            ..Default::default()
        },
    );
    assert_eq!(study.ratings.len(), 40 * 5492);
    let file = std::fs::File::create(d.join("ratings.csv")).unwrap();
    write_ratings_csv(file, &study.ratings).unwrap();
    ok(d, &["process", "--ratings", "ratings.csv", "--report", "report.json"]);
    let table = SubjectiveTable::read_csv(std::fs::File::open(d.join("mos.csv")).unwrap()).unwrap();
    assert_eq!(table.len(), 5492);
    assert!(table.rows.values().all(|r| (0.0..=5.0).contains(&r.mos)));
    let report = read_json(&d.join("report.json"));
    assert_eq!(report["rows_consumed"], 219_680);
    assert_eq!(report["stimuli"], 5492);
}
