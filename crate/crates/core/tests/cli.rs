use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(dir: &Path, command: &str, config: &str) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{command}.json"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_ddform"))
        .args([command, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("DDFORM_THREADS", "1")
        .output()
        .unwrap();
    let printed = String::from_utf8_lossy(&output.stdout).trim().to_string();
    (output, PathBuf::from(printed))
}

#[test]
fn solve_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, dir) = run(
        tmp.path(),
        "solve",
        r#"{"command":"solve","dim":2,"n":17,"boundary":{"family":"null_quadratic"}}"#,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["error_vs_exact"].as_f64().unwrap() <= 1e-8);
    let csv = std::fs::read_to_string(dir.join("solution.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,value\n"));
    assert_eq!(csv.lines().count(), 17 * 17 + 1);
    assert_eq!(dir.file_name().unwrap().len(), 16);
}

#[test]
fn summaries_are_byte_identical_across_runs() {
    let cfg = r#"{"command":"theorem1","dim":2,"n":65,
        "coefficient":{"kind":"holder_bump","kappa":0.1,"alpha":0.3,"center":[0.2,0.1]}}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, da) = run(a.path(), "theorem1", cfg);
    let (ob, db) = run(b.path(), "theorem1", cfg);
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(ob.status.code(), Some(0));
    let sa = std::fs::read(da.join("summary.json")).unwrap();
    let sb = std::fs::read(db.join("summary.json")).unwrap();
    assert_eq!(sa, sb);
    assert!(da.join("decay_0.csv").exists());
}

#[test]
fn invalid_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = run(tmp.path(), "solve", r#"{"command":"solve","dim":2,"n":16}"#);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("odd"));
    let (out, _) = run(tmp.path(), "solve", r#"{"command":"theorem1","dim":2,"n":17}"#);
    assert_eq!(out.status.code(), Some(2));
    let (out, _) = run(tmp.path(), "solve", "not json");
    assert_eq!(out.status.code(), Some(2));
    let (out, _) = run(tmp.path(), "theorem2", r#"{"command":"theorem2","dim":1,"n":17}"#);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invariants_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, dir) = run(tmp.path(), "invariants", r#"{"command":"invariants","dim":2,"n":9}"#);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    let (out, _) = run(
        tmp.path(),
        "invariants",
        r#"{"command":"invariants","dim":2,"n":9,"inject":{"tampered_solution":true}}"#,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fundsol_and_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = run(
        tmp.path(),
        "fundsol",
        r#"{"command":"fundsol","dim":3,"n":9,"fundsol":{"matrix":[[0.5,0,0],[0,1,0],[0,0,2]]}}"#,
    );
    assert_eq!(out.status.code(), Some(0));
    let (out, dir) = run(
        tmp.path(),
        "convergence",
        r#"{"command":"convergence","dim":2,"n":9,"n_list":[17,33],"boundary":{"family":"null_quadratic"}}"#,
    );
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"command":"solve","dim":1,"n":9}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ddform"))
        .args(["solve", "--config"])
        .arg(&cfg)
        .env("DDFORM_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ddform::cli::ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
