use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pathogan");

fn smoke_config(dir: &Path, patch: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let mut doc: serde_json::Value = serde_json::from_slice(&std::fs::read(shipped).unwrap()).unwrap();
    doc["output_dir"] = serde_json::Value::String(dir.join("out").display().to_string());
    patch(&mut doc);
    let path = dir.join("smoke.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path
}

fn pathogan(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PATHOGAN_OUTPUT_ROOT").output().unwrap()
}

fn stdout_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().unwrap())
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_method_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    let out = pathogan(&["run", "--config", cfg.to_str().unwrap(), "--method", "wgan_rr", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("wgan_rr"), "{}", stderr(&out));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |d| d["methods"] = serde_json::json!([{ "kind": "jump_rr", "epoch_budget": 7 }]));
    let out = pathogan(&["compare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("jump_rr"), "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn reference_run_writes_one_row_per_epoch_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    let args = ["run", "--config", cfg.to_str().unwrap(), "--method", "reference", "--seed", "11"];
    let first = stdout_dir(&pathogan(&args));
    let second = stdout_dir(&pathogan(&args));
    assert_ne!(first, second, "runs never overwrite each other");
    let matches = std::fs::read_to_string(first.join("matches.csv")).unwrap();
    assert_eq!(matches.lines().count(), 1 + 150);
    for f in ["result.json", "matches.csv", "trajectory.csv", "fitness.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stats_is_idempotent_and_rejects_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |d| {
        d["methods"] = serde_json::json!([{ "kind": "standard_rr" }, { "kind": "evolution_hetero" }])
    });
    let suite = stdout_dir(&pathogan(&["compare", "--config", cfg.to_str().unwrap()]));
    let summary = std::fs::read(suite.join("summary.csv")).unwrap();
    assert!(suite.join("comparison_best.csv").exists());

    let a = stdout_dir(&pathogan(&["stats", "--dir", suite.to_str().unwrap()]));
    let b = stdout_dir(&pathogan(&["stats", "--dir", suite.to_str().unwrap()]));
    assert_ne!(a, b);
    for f in ["summary.csv", "summary_all.csv", "comparison_best.csv", "comparison_all.json"] {
        let original = std::fs::read(suite.join(f)).unwrap();
        assert_eq!(std::fs::read(a.join(f)).unwrap(), original, "{f}");
        assert_eq!(std::fs::read(b.join(f)).unwrap(), original, "{f}");
    }
    assert_eq!(std::fs::read(a.join("summary.csv")).unwrap(), summary);

    let victim = suite.join("runs/standard_rr/run-2/result.json");
    let mut bytes = std::fs::read(&victim).unwrap();
    let at = bytes.iter().position(|b| b.is_ascii_digit()).unwrap();
    bytes[at] = if bytes[at] == b'9' { b'8' } else { bytes[at] + 1 };
    std::fs::write(&victim, bytes).unwrap();
    let out = pathogan(&["stats", "--dir", suite.to_str().unwrap()]);
    let dir = stdout_dir(&out);
    let err = stderr(&out);
    assert!(err.contains("run-2") && err.contains("rejected"), "{err}");
    // four standard_rr runs left, below the minimum, so no matrix
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(!summary.contains("standard_rr"), "{summary}");
    assert!(summary.contains("evolution_hetero"));
    assert!(!dir.join("comparison_best.csv").exists());
    assert!(err.contains("no comparison matrix"), "{err}");
}

#[test]
fn compare_needs_two_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |d| d["methods"] = serde_json::json!([{ "kind": "stochastic_rr" }]));
    let out = pathogan(&["compare", "--config", cfg.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("two methods"), "{}", stderr(&out));
}

#[test]
fn dump_data_prints_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |_| {});
    let out = pathogan(&["dump-data", "--config", cfg.to_str().unwrap(), "--n", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("x,y"));
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(pathogan(&["compare"]).status.code(), Some(2));
    assert_eq!(pathogan(&["frobnicate"]).status.code(), Some(2));
}
