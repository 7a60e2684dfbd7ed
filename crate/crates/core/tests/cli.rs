use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 11
trials = 3
ladder = [30, 40]
n_test = 200
bootstrap_resamples = 200

[problem]
loss = { kind = "huber", delta = 1.0 }
labeler = { eta = { kind = "linear" }, tau = 0.5, noise_law = "gaussian" }
regularizer = { kind = "ridge", lambda = 0.1 }

[[families]]
family = "linear-independent"
entry_law = "rademacher"

[[families]]
family = "gaussian-control"

[free_energy]
candidates = 32
construction = "random-net"
betas = [0.1, 1.0, 10.0]
path_points = 4

[perturbed]
s_grid = [-0.1, 0.1]
n_test = 200

[near_minimizers]
t_offsets = [0.0, 0.05]
n_test = 200
"#;

fn ermu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ermu"))
        .args(args)
        .env("ERMU_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, SMALL);
    let out = dir.join(out);
    let mut args = vec!["run", "--config", &cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ermu(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_small(dir.path(), "a", &[]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run_small(dir.path(), "b", &[]);
    assert!(b.status.success());
    for f in ["trials.csv", "path_traces.csv", "free_energy.json", "d_curves.csv", "near_minimizers.csv", "config.toml", "MANIFEST"] {
        assert!(dir.path().join("a").join(f).exists(), "missing {f}");
    }
    for f in ["trials.csv", "path_traces.csv", "d_curves.csv", "near_minimizers.csv", "free_energy.json"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let trials = fs::read_to_string(dir.path().join("a/trials.csv")).unwrap();
    // header + 2 families × 2 sizes × 3 trials × 2 arms
    assert_eq!(trials.lines().count(), 1 + 24);
    assert!(trials.contains("\r\n"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/MANIFEST")).unwrap()).unwrap();
    let manifest_b: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b/MANIFEST")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], manifest_b["config_hash"]);
    assert_eq!(manifest["summary"]["trials"], 12);
    assert!(String::from_utf8_lossy(&a.stdout).contains("quarantined: none"));
}

#[test]
fn seed_override_changes_draws() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_small(dir.path(), "a", &[]).status.success());
    assert!(run_small(dir.path(), "b", &["--seed-override", "12"]).status.success());
    let x = fs::read(dir.path().join("a/trials.csv")).unwrap();
    let y = fs::read(dir.path().join("b/trials.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn report_summarizes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_small(dir.path(), "a", &[]).status.success());
    let out = dir.path().join("a");
    let r = ermu(&["report", out.to_str().unwrap(), "--resamples", "200"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let families = report["families"].as_array().unwrap();
    assert_eq!(families.len(), 2);
    assert!(families.iter().any(|f| f["null_calibration"].is_string()));
    let gaps = fs::read_to_string(out.join("gap_vs_n.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 1 + 4);
}

#[test]
fn report_merges_files_with_different_families() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_small(dir.path(), "a", &[]).status.success());
    let body = fs::read_to_string(dir.path().join("a/trials.csv")).unwrap();
    let mut lines = body.split("\r\n").filter(|l| !l.is_empty());
    let header = lines.next().unwrap();
    let (lin, ctl): (Vec<&str>, Vec<&str>) = lines.partition(|l| l.starts_with("linear"));
    let merged = dir.path().join("merged");
    fs::create_dir(&merged).unwrap();
    fs::write(merged.join("trials_linear.csv"), format!("{header}\r\n{}\r\n", lin.join("\r\n"))).unwrap();
    fs::write(merged.join("trials_control.csv"), format!("{header}\r\n{}\r\n", ctl.join("\r\n"))).unwrap();
    let r = ermu(&["report", merged.to_str().unwrap(), "--resamples", "200"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(merged.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["families"].as_array().unwrap().len(), 2);
}

#[test]
fn single_trial_report_flags_degenerate_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("trials = 3", "trials = 1"));
    let out = dir.path().join("one");
    assert!(ermu(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let r = ermu(&["report", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("degenerate CI"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["families"][0]["sizes"][0]["degenerate_ci"], true);
}

#[test]
fn report_names_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_small(dir.path(), "a", &[]).status.success());
    let out = dir.path().join("a");
    fs::write(out.join("trials_bad.csv"), "family,n\r\nx,1\r\n").unwrap();
    let r = ermu(&["report", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("trials_bad.csv"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = ermu(&["report", empty.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("no trials"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("ladder = [30, 40]", "ladder = [40, 30]"), "ladder"),
        (SMALL.replace("trials = 3", "trials = 3\nbogus = 1"), "bogus"),
        (SMALL.replace("s_grid = [-0.1, 0.1]", "s_grid = [0.1]"), "perturbed.s_grid"),
        ("trials = [".to_string(), "syntax"),
    ];
    for (body, needle) in cases {
        let cfg = write_config(dir.path(), &body);
        let out = dir.path().join("never");
        let r = ermu(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(2), "{needle}: {}", stderr(&r));
        assert!(stderr(&r).contains(needle), "{needle} not in {}", stderr(&r));
        assert!(!out.join("trials.csv").exists());
    }
    let r = ermu(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn selftest_passes() {
    let r = ermu(&["selftest"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    let out = String::from_utf8_lossy(&r.stdout);
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 6);
    assert!(!out.contains("FAIL"));
}
