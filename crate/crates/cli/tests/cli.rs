use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn constrank() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_constrank"));
    c.env_remove("CONSTRANK_THREADS");
    c
}

#[test]
fn rank_check_prints_record_and_exits_zero() {
    let out = constrank()
        .args(["rank-check", "--config"])
        .arg(configs().join("rank_check_curl.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["rank"], 2);
    assert_eq!(v["pass"], true);
}

#[test]
fn seed_and_thread_overrides_keep_bodies_identical() {
    let body = |threads: &str| {
        let out = constrank()
            .args(["verify-poincare", "--seed", "7", "--config"])
            .arg(configs().join("poincare_rot.json"))
            .env("CONSTRANK_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        assert_eq!(v["seed"], 7);
        v
    };
    assert_eq!(body("1"), body("3"));
}

#[test]
fn mismatched_subcommand_is_an_error() {
    let out = constrank()
        .args(["minimize", "--config"])
        .arg(configs().join("rank_check_curl.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn batch_writes_records_and_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = constrank()
        .args(["batch", "--config"])
        .arg(configs().join("rank_suite.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("000-rank-check.json").exists());

    let out = constrank()
        .args(["batch", "--filter", "nothing-matches", "--config"])
        .arg(configs().join("rank_suite.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
