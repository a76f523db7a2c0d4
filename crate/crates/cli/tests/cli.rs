use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scaling-path"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "alphas": [1.0],
        "betas": [16.0],
        "fib_n": 40,
        "gd": { "max_iter": 2000 },
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = run(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(stdout_json(&out)["cells"], 1);
    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["heatmap.csv", "meta.json", "table.csv"]);
}

#[test]
fn solve_path_dispatches_on_the_limits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let rich = dir.path().join("rich");
    stdout_json(&run(&[
        "solve-path",
        "--alpha",
        "0",
        "--config",
        &cfg,
        "--out",
        rich.to_str().unwrap(),
    ]));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rich.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sidecar["kind"], "rich");
    assert!(rich.join("measure.csv").exists());

    let ntk = dir.path().join("ntk");
    stdout_json(&run(&[
        "solve-path",
        "--alpha",
        "inf",
        "--config",
        &cfg,
        "--out",
        ntk.to_str().unwrap(),
    ]));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ntk.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sidecar["kind"], "kernel");
    assert!(ntk.join("coefficients.csv").exists());

    let path = dir.path().join("path");
    let summary = stdout_json(&run(&[
        "solve-path",
        "--alpha",
        "1",
        "--config",
        &cfg,
        "--out",
        path.to_str().unwrap(),
    ]));
    assert_eq!(summary["status"], "ok");
    let surface = dir.path().join("surface.csv");
    let eval = run(&[
        "eval",
        "--solution",
        path.join("measure.csv").to_str().unwrap(),
        "--resolution",
        "3",
        "--config",
        &cfg,
        "--output",
        surface.to_str().unwrap(),
    ]);
    assert_eq!(stdout_json(&eval)["rows"], 9);
}

#[test]
fn train_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let vp = dir.path().join("vp");
    let gd = dir.path().join("gd");
    stdout_json(&run(&[
        "solve-path",
        "--alpha",
        "1",
        "--config",
        &cfg,
        "--out",
        vp.to_str().unwrap(),
    ]));
    stdout_json(&run(&[
        "train-gd",
        "--beta",
        "16",
        "--config",
        &cfg,
        "--out",
        gd.to_str().unwrap(),
    ]));
    for name in ["cloud.csv", "history.csv", "measure.csv", "training.json"] {
        assert!(gd.join(name).exists(), "{name}");
    }
    let cmp = stdout_json(&run(&[
        "compare",
        "--vp",
        vp.to_str().unwrap(),
        "--gd",
        gd.to_str().unwrap(),
        "--config",
        &cfg,
    ]));
    assert_eq!(cmp["beta"], 16.0);
    let gap: f64 = cmp["gap"].as_str().unwrap().parse().unwrap();
    assert!(gap.is_finite());
}

#[test]
fn usage_errors_exit_with_two() {
    let bad_flag = run(&["sweep", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert_eq!(stderr_json(&bad_flag)["error"], "usage");

    let missing = run(&["sweep", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr_json(&missing)["message"].is_string());

    let bad_alpha = run(&["solve-path", "--alpha", "-1"]);
    assert_eq!(bad_alpha.status.code(), Some(2));
    assert!(stderr_json(&bad_alpha)["error"].is_string());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"betas": []}"#).unwrap();
    let schema = run(&["sweep", "--config", bad.to_str().unwrap()]);
    assert_eq!(schema.status.code(), Some(2));
}
