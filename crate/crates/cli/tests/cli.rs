use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn uavfml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavfml")).args(args).env("UAVFML_THREADS", "1").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn optimize_writes_manifest_and_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = uavfml(&["optimize", "--mode", "bs-ra", "--seed", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "trace.csv", "solution.csv", "latency.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "optimize");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["mode"], "bs-ra");
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective\n"));
    let latency = fs::read_to_string(out.join("latency.csv")).unwrap();
    assert!(latency.starts_with("round,uav,t_sense,t_train,t_embed_up,t_model_up,t_bs_train,t_download,total\n"));
}

#[test]
fn zero_energy_budget_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"e_max": 0.0}"#);
    let out = tmp.path().join("run");
    let o = uavfml(&["optimize", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible: energy"));
    assert!(!out.exists());
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), r#"{"no_such_key": 1}"#);
    assert_eq!(uavfml(&["optimize", "--config", &cfg, "--out", s(&out)]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "{ not json");
    assert_eq!(uavfml(&["optimize", "--config", &cfg, "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(uavfml(&["optimize", "--mode", "fastest", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(uavfml(&["train", "--case", "4", "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn help_exits_cleanly() {
    let o = uavfml(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["optimize", "sweep", "train", "bound", "oracle-check"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn train_without_rounds_writes_only_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"num_rounds": 0}"#);
    let out = tmp.path().join("run");
    let o = uavfml(&["train", "--config", &cfg, "--case", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("training.csv")).unwrap(), "round,loss,accuracy,alpha_1,alpha_2\n");
}

#[test]
fn train_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = uavfml(&["train", "--case", "3", "--noniid", "--seed", "9", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let body = fs::read(a.join("training.csv")).unwrap();
    assert_eq!(body, fs::read(b.join("training.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "case3-noniid");
}

#[test]
fn sweep_single_point_and_unknown_parameter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = uavfml(&["sweep", "--param", "e_max", "--range", "8:8:1", "--mode", "bs-ra", "--mode", "uav-ss-pc", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "param_value,final_latency_bs-ra,final_latency_uav-ss-pc");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("8.000000000000e0,"));
    assert!(out.join("points/point_000_bs-ra.csv").exists());

    let bad = tmp.path().join("bad");
    assert_eq!(uavfml(&["sweep", "--param", "warp_speed", "--range", "1:2:2", "--out", s(&bad)]).status.code(), Some(2));
    assert_eq!(uavfml(&["sweep", "--param", "e_max", "--range", "1:2", "--out", s(&bad)]).status.code(), Some(2));
}

#[test]
fn bound_with_reference_constants() {
    let o = uavfml(&[
        "bound",
        "--overrides",
        "K=100",
        "J=15",
        "B=32",
        "eta=0.01",
        "U=10",
        "M=2",
        "L=1",
        "sigma=1",
        "C1=1",
        "gap=1",
        "lambda=1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("K,J,U,M,B,eta,bound,empirical_mean_grad_sq,lambda_hat"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..6], ["100", "15", "10", "2", "32", "0.01"]);
    let bound: f64 = row[6].parse().unwrap();
    assert!((bound - 0.2669491666666667).abs() <= 1e-12 * 0.2669491666666667);
    assert!(row[7].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn bound_rejects_negative_inputs() {
    let o = uavfml(&["bound", "--overrides", "eta=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(uavfml(&["bound", "--overrides", "U=2.5"]).status.code(), Some(2));
    assert_eq!(uavfml(&["bound", "--overrides", "nonsense"]).status.code(), Some(2));
}

#[test]
fn oracle_check_passes_and_a_loose_solver_fails() {
    let o = uavfml(&["oracle-check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);

    let o = uavfml(&["oracle-check", "--solver-tol", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("misses the oracle"));
    assert_eq!(uavfml(&["oracle-check", "--solver-tol", "0"]).status.code(), Some(2));
}
