use std::path::{Path, PathBuf};

use constrank::harness::*;
use constrank::LabError;
use nalgebra::Matrix3;
use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema").join(name);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, instance: &Value) {
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}\n{instance}");
}

fn config(file: &str) -> RunConfig {
    RunConfig::load(&repo().join("configs").join(file)).unwrap()
}

#[test]
fn rank_check_curl_matches_cross_product_rank() {
    let r = run(&config("rank_check_curl.json")).unwrap();
    // rank of a ↦ ξ × a is 2 for every ξ ≠ 0
    let xi = [0.3, -1.1, 0.7];
    let m = Matrix3::new(0.0, -xi[2], xi[1], xi[2], 0.0, -xi[0], -xi[1], xi[0], 0.0);
    let oracle = m.svd(false, false).singular_values.iter().filter(|s| **s > 1e-12).count();
    assert_eq!(r.report["is_constant_rank"], Value::Bool(true));
    assert_eq!(r.report["rank"].as_u64().unwrap() as usize, oracle);
    assert!(r.pass);
}

#[test]
fn minimize_returns_constant_field() {
    let r = run(&config("minimize_div.json")).unwrap();
    assert!(r.pass);
    assert!(r.metrics["oscillation"] < 1e-6, "{}", r.metrics["oscillation"]);
    assert!(r.table.as_ref().is_some_and(|t| !t.rows.is_empty()));
}

#[test]
fn poincare_run_is_reproducible() {
    let c = config("poincare_rot.json");
    let a = run(&c).unwrap();
    let b = run_with(
        &c,
        &RunOptions {
            threads: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(a.metrics["ratio"].is_finite() && a.pass);
    assert_eq!(a.body_string(), b.body_string());
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(run(&other).unwrap().body_string(), a.body_string());
}

#[test]
fn batch_of_rank_checks() {
    let m = Manifest::load(&repo().join("configs/rank_suite.json")).unwrap();
    let s = batch(&m, &RunOptions::default()).unwrap();
    assert_eq!((s.passed, s.total), (3, 3));
    assert!(s.all_pass());
}

#[test]
fn theta_sweep_emits_ratio_column() {
    let m = Manifest::load(&repo().join("configs/theta_sweep.json")).unwrap();
    let s = batch(&m, &RunOptions::default()).unwrap();
    let csv = s.to_csv().unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "ratio").unwrap();
    let ratios: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(ratios.len(), 3);
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
}

#[test]
fn empty_selection_is_a_config_error() {
    let mut m = Manifest::load(&repo().join("configs/rank_suite.json")).unwrap();
    m.filter = Some("no-such-run".into());
    assert!(matches!(batch(&m, &RunOptions::default()), Err(LabError::Config(_))));
    let empty = Manifest::from_json("[]").unwrap();
    assert!(matches!(batch(&empty, &RunOptions::default()), Err(LabError::Config(_))));
}

#[test]
fn failing_runs_are_reported_not_fatal() {
    let m = Manifest::from_json(
        r#"[{"command":"rank-check","operator":"curl"},
            {"command":"decompose","operator":"grad","dim_n":2}]"#,
    )
    .unwrap();
    let s = batch(&m, &RunOptions::default()).unwrap();
    assert_eq!(s.passed, 1);
    assert_eq!(s.failed, vec!["001-decompose".to_string()]);
    assert!(s.records[1].error.is_some());
}

#[test]
fn missing_files_are_config_errors() {
    let c = RunConfig::from_json(
        r#"{"command":"project","operator":"div","field":{"kind":"file","path":"nope.bin"}}"#,
    )
    .unwrap();
    assert!(matches!(run(&c), Err(LabError::Config(_))));
    let c = RunConfig::from_json(r#"{"command":"rank-check","operator":{"file":"nope.json"}}"#).unwrap();
    assert!(matches!(run(&c), Err(LabError::Config(_))));
}

#[test]
fn shipped_configs_validate_and_records_match_schema() {
    let cfg_schema = schema("run_config.schema.json");
    let rec_schema = schema("run_record.schema.json");
    let dir = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in std::fs::read_dir(repo().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let configs: Vec<RunConfig> = match Manifest::load(&path) {
            Ok(m) if v.get("command").is_none() => m.selected(),
            _ => vec![RunConfig::load(&path).unwrap()],
        };
        for c in configs {
            assert_valid(&cfg_schema, &serde_json::to_value(&c).unwrap());
            let r = run(&c).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(r.pass, "{}: {}", path.display(), r.report);
            assert_valid(&rec_schema, &serde_json::to_value(&r).unwrap());
            r.write(dir.path()).unwrap();
            n += 1;
        }
    }
    assert!(n >= 14);
    let written = std::fs::read_to_string(dir.path().join("excess-two-phase.json")).unwrap();
    assert_valid(&rec_schema, &serde_json::from_str(&written).unwrap());
    let csv = std::fs::read_to_string(dir.path().join("excess-two-phase.csv")).unwrap();
    assert!(csv.starts_with("center,R,excess"));
}

#[test]
fn failed_record_matches_schema() {
    let m = Manifest::from_json(r#"[{"command":"decompose","operator":"grad","dim_n":2}]"#).unwrap();
    let s = batch(&m, &RunOptions::default()).unwrap();
    assert_valid(&schema("run_record.schema.json"), &serde_json::to_value(&s.records[0]).unwrap());
}
