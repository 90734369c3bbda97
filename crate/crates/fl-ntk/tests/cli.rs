use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fl-ntk")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--set", "n=8", "--set", "width=256", "--set", "clients=2", "--set", "local_steps=2"];

fn with(base: &[&'static str], extra: &[&'static str]) -> Vec<&'static str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn bad_flag_and_bad_value_are_usage_errors() {
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--out", path(tmp.path()), "--set", "clients=zero"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("clients"));
}

#[test]
fn missing_dataset_file_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--out", path(tmp.path()), "--set", "dataset=/nonexistent/data.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_dataset_file_is_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    fs::write(&data, "# fl-ntk dataset v1, n=2, d=2\n1,0,0.5\n0,oops,1\n").unwrap();
    let out = run(&["kernel", "--out", path(&tmp.path().join("out")), "--set", &format!("dataset={}", path(&data))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));
}

#[test]
fn near_parallel_dataset_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    let e = 1e-10_f64;
    let c = (1.0 - e * e).sqrt();
    fs::write(&data, format!("# fl-ntk dataset v1, n=3, d=2\n1,0,0.5\n{c},{e},-0.5\n0,1,0.25\n")).unwrap();
    let out = run(&[
        "kernel",
        "--out",
        path(&tmp.path().join("out")),
        "--set",
        &format!("dataset={}", path(&data)),
        "--set",
        "clients=1",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_three_and_keeps_partial_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", path(tmp.path())];
    args.extend(with(SMALL, &["--set", "eta_local=1000", "--set", "rounds=50"]));
    assert_eq!(code(&run(&args)), 3);
    assert!(tmp.path().join("seed-0/trace.csv").exists());
}

#[test]
fn loss_only_writes_no_local_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", path(tmp.path()), "--record", "loss-only"];
    args.extend(with(SMALL, &["--set", "rounds=20"]));
    assert_eq!(code(&run(&args)), 0);
    assert!(tmp.path().join("seed-0/trace.csv").exists());
    assert!(!tmp.path().join("seed-0/local.csv").exists());
}

#[test]
fn verify_replays_a_full_states_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", path(tmp.path()), "--record", "full-states", "--seed", "0,1"];
    args.extend(with(SMALL, &["--set", "rounds=5"]));
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["verify", path(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("verify_summary.json").exists());
}

#[test]
fn verify_rejects_a_tampered_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", path(tmp.path())];
    args.extend(with(SMALL, &["--set", "rounds=5"]));
    assert_eq!(code(&run(&args)), 0);
    let trace = tmp.path().join("seed-0/trace.csv");
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    lines[last] = lines[last].replacen(',', ",9", 1);
    fs::write(&trace, lines.join("\n") + "\n").unwrap();
    assert_ne!(code(&run(&["verify", path(tmp.path())])), 0);
}

#[test]
fn json_and_key_value_configs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let kv = tmp.path().join("run.cfg");
    let json = tmp.path().join("run.json");
    fs::write(&kv, "# small run\nn = 8\nwidth = 128\nclients = 2\n").unwrap();
    fs::write(&json, r#"{"n": 8, "width": 128, "clients": 2}"#).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&["kernel", "--config", path(&kv), "--out", path(&a)])), 0);
    assert_eq!(code(&run(&["kernel", "--config", path(&json), "--out", path(&b)])), 0);
    for f in ["seed-0/h_inf.csv", "seed-0/h0.csv", "seed-0/summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
