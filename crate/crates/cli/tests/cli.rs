use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fastgate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastgate"))
        .args(args)
        .current_dir(dir)
        .env("FASTGATE_RUNS_DIR", dir.join("runs"))
        .output()
        .expect("spawn fastgate")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = fastgate(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Rows of a headed CSV as vectors of fields.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/mnist-smoke")
}

#[test]
fn gates_single_point() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gates", "--gate", "fast", "--zmin", "0", "--zmax", "0", "--step", "1", "--out", "g.csv"]);
    let text = std::fs::read_to_string(tmp.path().join("g.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("z,f,df_dz,one_minus_f,g_phi"));
    let r = rows(&tmp.path().join("g.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(num(&r[0][1]), 0.5);
    assert!(tmp.path().join("g.csv.manifest.json").exists());
}

#[test]
fn gates_default_grid_orders_complements() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gates", "--out", "all.csv"]);
    let at4 = |gate: &str| {
        rows(&tmp.path().join("all.csv"))
            .into_iter()
            .find(|r| r[0] == gate && (num(&r[1]) - 4.0).abs() < 1e-9)
            .map(|r| num(&r[4]))
            .unwrap()
    };
    assert!(at4("fast") < at4("sigmoid"));
    assert!(at4("sigmoid") < at4("softsign"));
}

#[test]
fn gates_digits_round_trip() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["gates", "--gate", "sigmoid", "--zmin", "-1", "--zmax", "1", "--step", "0.1", "--out", "s.csv"]);
    for r in rows(&tmp.path().join("s.csv")) {
        let z = num(&r[0]);
        let f = num(&r[1]);
        assert_eq!(f, fastgate::GateKind::Sigmoid.value(z));
        let mantissa = r[1].split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{}", r[1]);
    }
}

#[test]
fn unknown_gate_is_a_usage_error_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = fastgate(tmp.path(), &["gates", "--gate", "sigmiod", "--out", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    for name in ["sigmoid", "softsign", "fast", "iterfast"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn toy_flow_fit_gives_inverse_rate() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["toy", "run", "--gate", "sigmoid", "--method", "flow", "--horizon", "10", "--tau-end", "1e6", "--out", "t.csv"]);
    ok(d, &["toy", "fit-bound", "--input", "t.csv", "--gate", "sigmoid", "--out", "fit.json"]);
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    let slope = fit["slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
    assert!(fit["C"].as_f64().unwrap() > 0.0);
}

#[test]
fn toy_flow_takes_no_learning_rate() {
    let tmp = TempDir::new().unwrap();
    let out = fastgate(tmp.path(), &["toy", "run", "--method", "flow", "--lr", "1", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("t.csv").exists());
}

#[test]
fn toy_adam_fast_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = ["toy", "run", "--gate", "fast", "--method", "adam", "--horizon", "30", "--lr", "0.01", "--steps", "20000"];
    ok(d, &[&args[..], &["--out", "a.csv"]].concat());
    let r = rows(&d.join("a.csv"));
    assert!(r.len() > 100);
    let last_q = num(&r.last().unwrap()[3]);
    let first_q = num(&r[0][3]);
    assert!(last_q < first_q);
}

#[test]
fn fit_without_saturated_tail_cites_requirement() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["toy", "run", "--gate", "sigmoid", "--method", "flow", "--tau-end", "0.1", "--out", "short.csv"]);
    let out = fastgate(d, &["toy", "fit-bound", "--input", "short.csv", "--gate", "sigmoid", "--out", "fit.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("f > 0.9"), "{}", stderr(&out));
}

#[test]
fn train_writes_run_directory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = [
        "train", "adding", "--length", "20", "--hidden", "8", "--gate", "fast", "--cell", "tied-lstm", "--iters", "40",
        "--batch", "8", "--log-every", "5", "--seed", "1", "--run-dir", "run",
    ];
    ok(d, &args);
    for f in ["manifest.json", "config.json", "metrics.csv", "checkpoint.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("iteration,loss,accuracy,grad_norm_preclip,wall_ms,timescale_mean,timescale_std")
    );
    let r = rows(&d.join("run/metrics.csv"));
    assert_eq!(r.len(), 9);
    assert_eq!(r.last().unwrap()[0], "40");
}

#[test]
fn train_defaults_to_runs_root() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["train", "adding", "--length", "10", "--hidden", "4", "--iters", "2", "--batch", "2", "--name", "named"]);
    assert!(d.join("runs/named/metrics.csv").exists());
}

#[test]
fn unknown_cell_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = fastgate(tmp.path(), &["train", "adding", "--cell", "nru", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn missing_mnist_lists_expected_paths() {
    let tmp = TempDir::new().unwrap();
    let out = fastgate(tmp.path(), &["train", "mnist", "--data-dir", "nowhere", "--iters", "1", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(4));
    let msg = stderr(&out);
    assert!(msg.contains("train-images-idx3-ubyte") && msg.contains("train-labels-idx1-ubyte"), "{msg}");
}

#[test]
fn mnist_smoke_data_trains() {
    let tmp = TempDir::new().unwrap();
    let data = mnist_dir();
    let args = [
        "train", "mnist", "--permute", "bitreversal", "--subsample", "20", "--data-dir", data.to_str().unwrap(), "--hidden",
        "4", "--iters", "2", "--batch", "5", "--log-every", "1", "--run-dir", "m",
    ];
    ok(tmp.path(), &args);
    let r = rows(&tmp.path().join("m/metrics.csv"));
    assert_eq!(r.len(), 3);
    assert!(!r[0][2].is_empty(), "accuracy column");
}

#[test]
fn copy_with_softsign_stays_near_chance() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "train", "copy", "--length", "100", "--gate", "softsign", "--hidden", "32", "--iters", "200", "--batch", "32",
        "--log-every", "50", "--seed", "2", "--run-dir", "c",
    ];
    ok(tmp.path(), &args);
    let r = rows(&tmp.path().join("c/metrics.csv"));
    let acc = num(&r.last().unwrap()[2]);
    assert!((acc - 0.125).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn timescales_of_fresh_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["train", "adding", "--length", "10", "--hidden", "16", "--gate", "sigmoid", "--iters", "0", "--run-dir", "s"]);
    ok(d, &["timescales", "--checkpoint", "s/checkpoint.json", "--out", "ts.csv"]);
    let r = rows(&d.join("ts.csv"));
    assert_eq!(r.len(), 18);
    for row in &r[..16] {
        assert!((num(&row[1]) - 3.1922192845).abs() < 1e-8, "{row:?}");
    }
    assert_eq!(r[16][0], "mean");
    assert_eq!(r[17][0], "std");

    let chrono = ["--init", "chrono", "--t-max", "50", "--iters", "0", "--hidden", "64", "--run-dir", "c"];
    ok(d, &[&["train", "adding", "--length", "10"][..], &chrono].concat());
    ok(d, &["timescales", "--checkpoint", "c/checkpoint.json", "--out", "tc.csv"]);
    let r = rows(&d.join("tc.csv"));
    for row in &r[..64] {
        let t = num(&row[1]);
        assert!((1.0 - 1e-9..=50.0 + 1e-9).contains(&t), "{t}");
    }
}

#[test]
fn timescales_report_bad_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = fastgate(d, &["timescales", "--checkpoint", "missing.json", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(4));
    std::fs::write(d.join("bad.json"), "{\"spec\": [1, 2").unwrap();
    let out = fastgate(d, &["timescales", "--checkpoint", "bad.json", "--out", "t.csv"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("at byte"), "{}", stderr(&out));
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = r#"{"batch": 3, "seed": 9, "task": {"name": "copy", "length": 7},
        "optimizer": {"kind": "adam", "lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}"#;
    std::fs::write(d.join("c.json"), cfg).unwrap();
    ok(d, &["train", "copy", "--config", "c.json", "--seed", "4", "--hidden", "4", "--iters", "1", "--run-dir", "r"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r/manifest.json")).unwrap()).unwrap();
    let t = &m["config"]["train"];
    assert_eq!(t["batch"], 3);
    assert_eq!(t["seed"], 4);
    assert_eq!(t["task"]["length"], 7);
    assert_eq!(t["optimizer"]["kind"], "adam");
    assert_eq!(m["seed"], 4);
}

#[test]
fn replaying_a_manifest_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = ["train", "copy", "--length", "5", "--hidden", "6", "--iters", "12", "--batch", "4", "--log-every", "3"];
    ok(d, &[&args[..], &["--run-dir", "a"]].concat());
    let first = std::fs::read(d.join("a/metrics.csv")).unwrap();
    let ckpt = std::fs::read(d.join("a/checkpoint.json")).unwrap();
    ok(d, &["replay", "a/manifest.json"]);
    assert_eq!(std::fs::read(d.join("a/metrics.csv")).unwrap(), first);
    assert_eq!(std::fs::read(d.join("a/checkpoint.json")).unwrap(), ckpt);

    ok(d, &["toy", "run", "--gate", "fast", "--method", "rmsprop", "--lr", "0.01", "--steps", "500", "--out", "t.csv"]);
    let traj = std::fs::read(d.join("t.csv")).unwrap();
    std::fs::remove_file(d.join("t.csv")).unwrap();
    ok(d, &["replay", "t.csv.manifest.json"]);
    assert_eq!(std::fs::read(d.join("t.csv")).unwrap(), traj);
}

#[test]
fn seed_sweep_uses_disjoint_directories() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = ["train", "adding", "--length", "10", "--hidden", "4", "--iters", "3", "--batch", "2", "--seeds", "1,2,3"];
    ok(d, &[&args[..], &["--jobs", "2", "--run-dir", "sweep"]].concat());
    let metrics: Vec<Vec<u8>> =
        (1..=3).map(|s| std::fs::read(d.join(format!("sweep/seed-{s}/metrics.csv"))).unwrap()).collect();
    assert_ne!(metrics[0], metrics[1]);
    assert_ne!(metrics[1], metrics[2]);
}

#[test]
fn divergence_exits_with_runtime_code() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = ["toy", "run", "--gate", "sigmoid", "--method", "gd", "--lr", "1e12", "--steps", "50", "--out", "d.csv"];
    let out = fastgate(d, &args);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(d.join("d.csv").exists());
}

#[test]
fn adding_run_at_full_length() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "train", "adding", "--length", "200", "--hidden", "64", "--gate", "fast", "--cell", "tied-lstm", "--iters", "2000",
        "--seed", "1", "--run-dir", "a",
    ];
    ok(tmp.path(), &args);
    let r = rows(&tmp.path().join("a/metrics.csv"));
    assert!(r.len() >= 200, "{} rows", r.len());
    assert!(r.iter().all(|row| num(&row[1]).is_finite()));
}
