use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_marked-ratio")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("sample");
    let bundle = dir.path().join("bundle");
    cli(&["simulate", "--horizon", "100", "--seed", "3", "--out", path(&sample)]);
    assert!(sample.join("events.csv").exists());

    let config = dir.path().join("fit.toml");
    fs::write(&config, "[train]\nmax_epochs = 2\n").unwrap();
    cli(&[
        "fit", "--sample", path(&sample), "--method", "one-step", "--layers", "1", "--width", "4",
        "--config", path(&config), "--out", path(&bundle),
    ]);
    let out = cli(&["evaluate", "--bundle", path(&bundle), "--intervals", "4", "--out", path(&dir.path().join("eval"))]);
    let eval: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(eval["eps_l2"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("eval/evaluation.json").exists());
}

#[test]
fn convergence_subcommand_writes_study_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.toml");
    fs::write(
        &config,
        "horizons = [30.0, 60.0, 120.0]\nreplications = 1\nn_layers = [1]\nwidths = [3]\ngrid_intervals = 3\n\
         [train]\nmax_epochs = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let stdout = cli(&["convergence", "--config", path(&config), "--seed", "5", "--workers", "1", "--out", path(&out)]).stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("slope"));
    for file in ["results.csv", "aggregate.csv", "slopes.json", "run.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    assert!(fs::read_to_string(out.join("results.csv")).unwrap().lines().nth(1).unwrap().contains(",5,"));
}

#[test]
fn bounds_subcommand_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bounds.json");
    fs::write(
        &input,
        r#"{"smoothness": {"betas": [1.0], "ts": [2]}, "horizon": 10000.0,
            "net": {"depth": 1, "widths": [3, 8, 7], "sparsity": 50, "delta": 0.1},
            "tail": {"p": 2.0, "q": 1.0, "c": 1.0, "b": 2.0, "k": 1.0}, "interval": [0.5, 2.0]}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = cli(&["bounds", "--config", path(&input), "--out", path(&report)]);
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((value["rate_phi"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    assert!(report.exists());
}

#[test]
fn lob_fit_reads_session_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("session.csv");
    let mut text = String::from("timestamp_us,side,best_bid,best_ask,qty_bid,qty_ask,mid_changed\n");
    for n in 0..400 {
        let side = (n * 7 / 3) % 2;
        text += &format!("{},{},100,{},{},{},{}\n", n * 1000, side, 101 + n % 3, 10 + n % 13, 5 + n % 7, (n / 5) % 2);
    }
    fs::write(&csv, text).unwrap();
    let config = dir.path().join("train.toml");
    fs::write(&config, "[train]\nmax_epochs = 2\n").unwrap();
    let out = dir.path().join("lob");
    cli(&[
        "lob-fit", "--input", path(&csv), "--method", "one-step", "two-step", "--layers", "1", "--width", "4",
        "--config", path(&config), "--out", path(&out),
    ]);
    assert!(out.join("lob_curves_two-step.csv").exists());
    assert!(out.join("lob_empirical.csv").exists());
}

#[test]
fn invalid_arguments_fail() {
    let status = Command::new(env!("CARGO_BIN_EXE_marked-ratio")).args(["fit", "--sample", "/nonexistent"]).output().unwrap();
    assert!(!status.status.success());
    let status = Command::new(env!("CARGO_BIN_EXE_marked-ratio")).args(["lob-fit"]).output().unwrap();
    assert!(!status.status.success());
}
