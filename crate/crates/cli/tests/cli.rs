use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spectraj"));
    c.env_remove("SPECTRAJ_OUT_DIR");
    c
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("spectraj-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out-dir").arg(out).output().unwrap()
}

#[test]
fn identical_seed_gives_identical_detections() {
    let (a, b) = (tmp("det-a"), tmp("det-b"));
    let args = ["run", "--mode", "nm-filter", "--seed", "7", "--duration", "20"];
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    let da = std::fs::read(a.join("detections.jsonl")).unwrap();
    assert!(!da.is_empty());
    assert_eq!(da, std::fs::read(b.join("detections.jsonl")).unwrap());
    let echoed = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));
}

#[test]
fn oracle_bloch_steady_state() {
    let d = tmp("bloch");
    let out = run(&["run", "--mode", "oracle-bloch", "--omega", "10", "--gamma", "1", "--duration", "20"], &d);
    assert!(out.status.success());
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let pop = s["steady_excited_population"].as_f64().unwrap();
    assert!((pop - 0.4975).abs() < 1e-4);
    let sz = s["final_state"]["sz"].as_f64().unwrap();
    assert!((0.5 * (1.0 + sz) - pop).abs() < 1e-6);
}

#[test]
fn invalid_config_exits_2_with_line() {
    let d = tmp("badcfg");
    std::fs::create_dir_all(&d).unwrap();
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "mode = \"nm-filter\"\n\n[physics]\ngamma = \"fast\"\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");

    let out = run(&["run", "--mode", "nm-filter"], &d.join("noseed"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn numerical_fault_exits_3() {
    let d = tmp("overflow");
    let out = run(
        &["run", "--mode", "nm-filter", "--seed", "1", "--duration", "50", "--overflow", "error", "--max-in-window", "1"],
        &d,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window overflow"));
}

#[test]
fn batch_failure_leaves_partial_results() {
    let d = tmp("partial");
    let out = run(
        &[
            "batch", "--mode", "nm-filter", "--seed", "1", "--duration", "6", "--n-trajectories", "6",
            "--overflow", "error", "--max-in-window", "1",
        ],
        &d,
    );
    assert_ne!(out.status.code(), Some(0));
    let partial: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("partial_results.json")).unwrap()).unwrap();
    let failed = partial["failed"].as_array().unwrap().len();
    let done = partial["completed"].as_array().unwrap().len();
    assert_eq!(failed + done, 6);
    assert!(failed > 0);
}

#[test]
fn batch_worker_count_does_not_change_aggregate() {
    let (a, b) = (tmp("w1"), tmp("w4"));
    let base = ["batch", "--mode", "cascaded-filter", "--seed", "11", "--duration", "10", "--n-trajectories", "8"];
    let one = run(&[&base[..], &["--n-workers", "1"]].concat(), &a);
    let four = run(&[&base[..], &["--n-workers", "4"]].concat(), &b);
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn env_overrides_out_dir() {
    let d = tmp("env");
    let out = bin()
        .env("SPECTRAJ_OUT_DIR", &d)
        .args(["run", "--mode", "oracle-spectrum"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("band_weights.json").exists());
}
