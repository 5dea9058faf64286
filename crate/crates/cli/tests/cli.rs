use std::path::Path;
use std::process::{Command, Output};

fn farmlight(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_farmlight"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stderr(o)))
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = farmlight(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["synth", "distill", "gradcheck", "eval", "run", "sim"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn unknown_flag_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = farmlight(&["sim", "e2e", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = farmlight(&["bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("farmlight.json");
    std::fs::write(&cfg, r#"{"seed":1,"colour":"red"}"#).unwrap();
    let o = farmlight(&["--config", cfg.to_str().unwrap(), "gradcheck"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"cloud_addr":"not an address"}"#).unwrap();
    let o = farmlight(&["--config", cfg.to_str().unwrap(), "gradcheck"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let missing = dir.path().join("absent.json");
    let o = farmlight(&["--config", missing.to_str().unwrap(), "gradcheck"], dir.path());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn dpt_without_teacher_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = farmlight(
        &["synth", "gen", "--out", "data", "--train-per-class", "4", "--val-per-class", "2", "--test-per-class", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = farmlight(&["distill", "--stage", "dpt", "--data", "data", "--artifacts", "art"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("teacher"), "{err}");
    assert!(err.contains("teacher.flsm"), "{err}");
}

#[test]
fn synth_distill_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = farmlight(
        &[
            "--json", "synth", "gen", "--out", "data", "--train-per-class", "30", "--val-per-class", "10",
            "--test-per-class", "10",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifests = json(&o);
    assert_eq!(manifests.as_array().unwrap().len(), 3);
    for split in ["train", "val", "test"] {
        assert!(d.join("data").join(format!("{split}.ndjson.z")).is_file());
        assert!(d.join("data").join(format!("{split}.manifest.json")).is_file());
    }

    let o = farmlight(&["--json", "distill", "--data", "data", "--artifacts", "art"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let stages = json(&o);
    let stages = stages.as_array().unwrap();
    assert_eq!(stages.len(), 4);
    assert!(stages.iter().all(|s| s["frozen_unchanged"] == true));
    for f in ["teacher.flsm", "student-init.flsm", "student-dpt.flsm", "student-sft.flsm", "student-dft.flsm"] {
        assert!(d.join("art").join(f).is_file(), "{f} written");
    }

    let o = farmlight(
        &["--json", "eval", "--model", "art/student-dft.flsm", "--data", "data", "--report", "report.json"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = json(&o);
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(printed, written);
    let acc = written["closed_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn stage_runs_reproduce_the_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = farmlight(
        &["synth", "gen", "--out", "data", "--train-per-class", "12", "--val-per-class", "4", "--test-per-class", "4"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let full = json(&farmlight(&["--json", "distill", "--data", "data", "--artifacts", "all"], d));
    let mut staged = Vec::new();
    for stage in ["teacher", "dpt", "sft", "dft"] {
        let o = farmlight(&["--json", "distill", "--stage", stage, "--data", "data", "--artifacts", "one"], d);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        staged.extend(json(&o).as_array().unwrap().iter().cloned());
    }
    let ids = |v: &[serde_json::Value]| v.iter().map(|s| s["version_id"].clone()).collect::<Vec<_>>();
    assert_eq!(ids(full.as_array().unwrap()), ids(&staged));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = farmlight(&["--json", "gradcheck", "--coords", "20"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&o);
    assert_eq!(s["passed"], true);
    assert_eq!(s["stages"].as_array().unwrap().len(), 4);
}

#[test]
fn sim_e2e_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = farmlight(
        &["synth", "gen", "--out", "data", "--train-per-class", "30", "--val-per-class", "10", "--test-per-class", "2"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = farmlight(&["distill", "--data", "data", "--artifacts", "art"], d);
    assert!(o.status.success(), "{}", stderr(&o));

    let args = ["--json", "sim", "e2e", "--seed", "3", "--edges", "3", "--artifacts", "art"];
    let a = farmlight(&args, d);
    let b = farmlight(&args, d);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let s = json(&a);
    assert_eq!(s["ok"], true);
    assert_eq!(s["edges"].as_array().unwrap().len(), 3);
}

#[test]
fn sim_without_models_is_a_named_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = farmlight(&["sim", "e2e", "--artifacts", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("student-sft.flsm"), "{}", stderr(&o));
}

#[test]
fn eval_against_offline_edge_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = farmlight(
        &["synth", "gen", "--out", "data", "--train-per-class", "2", "--val-per-class", "2", "--test-per-class", "5"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    // Bind then drop so nothing is listening on the port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let o = farmlight(&["eval", "--edge", &url, "--data", "data", "--sessions", "3"], d);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
