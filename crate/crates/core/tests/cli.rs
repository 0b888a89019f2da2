use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqmargins"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    let entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    let text = std::fs::read_to_string(entries[0].join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn natfreq_prints_both_frequencies() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["natfreq", "--preset", "two_mode_4a"], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("1.0,") || stdout.contains("1.0\n"), "{stdout}");
    assert!(stdout.contains("1.732050807568877"), "{stdout}");
    let m = manifest(out.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "natfreq");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn configuration_errors_exit_with_2() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["natfreq", "--preset", "no_such_preset"], out.path());
    assert_eq!(o.status.code(), Some(2));

    let cfg = out.path().join("bad.json");
    std::fs::write(&cfg, r#"{"preset": "two_mode_4a", "unknown_key": 1}"#).unwrap();
    let o = run(&["natfreq", "--config", cfg.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, "{ not json").unwrap();
    let o = run(&["natfreq", "--config", cfg.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["natfreq"], out.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3_and_records_diagnostics() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("tiny_budget.json");
    std::fs::write(
        &cfg,
        r#"{"preset": "duffing_s2", "margins": {"integration": {"max_steps": 20}}}"#,
    )
    .unwrap();
    let runs = out.path().join("runs");
    let o = run(&["frc", "--config", cfg.to_str().unwrap()], &runs);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&runs);
    assert_eq!(m["status"], "failed");
    assert!(!m["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn frc_writes_the_reference_branch() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["frc", "--preset", "duffing_s2"], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(out.path());
    let branches = m["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 1);
    assert_eq!(branches[0]["file"], "branch_ref_0.csv");
    assert_eq!(branches[0]["termination"], "range-exit");
    assert_eq!(m["summary"]["folds"].as_array().unwrap().len(), 2);
    let dir = std::fs::read_dir(out.path()).unwrap().next().unwrap().unwrap().path();
    assert!(dir.file_name().unwrap().to_string_lossy().starts_with("frc_duffing_s2_"));
    let csv = std::fs::read_to_string(dir.join("branch_ref_0.csv")).unwrap();
    assert!(csv.starts_with("branch_id,family,step,lambda,r,period,eps_c,eps_F,x0_0"));
}
