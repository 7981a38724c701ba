use std::path::Path;
use std::process::{Command, Output};

use lurelq_cli::config::{parse_config, serialize};

fn lurelq(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lurelq"))
        .env_remove("LURELQ_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn check<'a>(report: &'a serde_json::Value, name: &str) -> &'a serde_json::Value {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap()
}

#[test]
fn transport_lmi_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lurelq(dir.path(), &["command=check", "model=transport", "n=50"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert!(check(&r, "lmi_min_eig")["value"].as_f64().unwrap() >= -1e-9);
    assert_eq!(r["pass"], true);
    assert_eq!(r["stamp"]["seed"], 0);
}

#[test]
fn wave_indicator_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = lurelq(dir.path(), &["command=values", "model=wave", "n=100", "x0=indicator"]);
    assert_eq!(out.status.code(), Some(0));
    let val_j = check(&report(dir.path()), "val_J")["value"].as_f64().unwrap();
    assert!((val_j + 0.5).abs() <= 0.025, "val_J = {val_j}");
}

#[test]
fn zero_horizon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lurelq(dir.path(), &["command=simulate", "model=transport", "n=50", "T=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T:"));
}

#[test]
fn bad_settings_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (args, key) in [
        (&["--command", "values", "--model", "heat", "--n", "-3"][..], "n:"),
        (&["command=check", "model=heat", "colour=red"][..], "colour:"),
        (&["model=heat"][..], "command:"),
        (&["command=check", "model=file"][..], "input_bundle:"),
    ] {
        let out = lurelq(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(key), "{args:?}");
    }
}

#[test]
fn failing_check_exits_one() {
    // The heat regularization converges like √ε, so the default schedule
    // stops short of the Cauchy tolerance.
    let dir = tempfile::tempdir().unwrap();
    let out = lurelq(dir.path(), &["command=solve", "model=heat", "n=20"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(dir.path());
    assert_eq!(check(&r, "cauchy_increment")["pass"], false);
    assert_eq!(check(&r, "lure_residual")["pass"], true);
    assert!(dir.path().join("solution.json").exists());
}

#[test]
fn simulation_csv_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["command=simulate", "model=wave", "n=20", "T=0.5", "x0=random", "seed=4"];
    assert_eq!(lurelq(a.path(), &args).status.code(), Some(0));
    assert_eq!(lurelq(b.path(), &args).status.code(), Some(0));
    let csv = std::fs::read(a.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.path().join("trajectory.csv")).unwrap());
    let header = String::from_utf8_lossy(&csv).lines().next().unwrap().to_string();
    assert!(
        header.starts_with("t,x_1,") && header.ends_with(",u_1,y_1,w_1"),
        "{header}"
    );
    assert!(a.path().join("plot.gp").exists());
}

#[test]
fn factorized_bundle_feeds_file_model() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        lurelq(dir.path(), &["command=factorize", "model=wave", "n=10"])
            .status
            .code(),
        Some(0)
    );
    let bundle = dir.path().join("bundle.json");
    let again = dir.path().join("again");
    let out = lurelq(
        &again,
        &[
            "command=solve",
            "model=file",
            &format!("input_bundle={}", bundle.display()),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(report(&again)["n"], 20);
}

#[test]
fn sweep_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        lurelq(dir.path(), &["command=sweep", "model=transport", "n=16"])
            .status
            .code(),
        Some(0)
    );
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,val_err_J,val_err_Jw,lure_residual"));
    let ns: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ns, vec![2, 4, 8, 16]);
}

#[test]
fn config_file_and_env_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"command": "check", "model": "heat", "n": 8}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lurelq"))
        .env("LURELQ_OUT", dir.path().join("env-out"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&dir.path().join("env-out"))["n"], 7);
}

#[test]
fn parse_serialize_is_stable() {
    let cfg = parse_config("command = sweep\nmodel = wave\nn = 30\neps = 1e-3, 1e-6\nx0 = exp").unwrap();
    let once = serialize(&cfg);
    assert_eq!(serialize(&parse_config(&once).unwrap()), once);
}
