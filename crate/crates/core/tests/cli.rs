use std::path::Path;
use std::process::{Command, Output};

fn qmag(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmag"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn simulate_is_byte_identical_under_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for dir in [&a, &b] {
        let o = qmag(&["--mode", "simulate", "--preset", "case-ii", "--seed", "9"], dir);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("dataset.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(summary(&a)["results"], summary(&b)["results"]);
    assert!(qmag(&["--mode", "simulate", "--preset", "case-ii", "--seed", "10"], &c).status.success());
    assert_ne!(read(&a), read(&c));
}

#[test]
fn config_overrides_preset_and_writes_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "simulate", "plan": {"n_m": 50}, "noise": {}, "trajectory_points": 30, "trajectory_repeats": 5}"#,
    )
    .unwrap();
    let o = qmag(&["--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("dataset.json")).unwrap()).unwrap();
    assert_eq!(data["n_m"], 50);
    assert_eq!(data["x"].as_array().unwrap().len(), 18);
    let traj = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "t_s,p_d_noiseless,p_d_noisy_mean");
    assert_eq!(lines.len(), 31);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[1] - v[2]).abs() <= 0.02, "{l}");
    }
}

#[test]
fn unknown_keys_and_bad_values_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"mode": "simulate", "plan": {"n_mm": 3}}"#).unwrap();
    let o = qmag(&["--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_mm"));
    std::fs::write(&cfg, r#"{"sensor": {"b_z_tesla": -1.0}}"#).unwrap();
    assert_eq!(qmag(&["--config", cfg.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    let o = qmag(&["--mode", "infer-grid"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "missing dataset");
}

#[test]
fn estimators_on_a_reference_record() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture("case-i-nm4");
    for (mode, file, key, lo, hi) in [
        ("infer-grid", "posterior.csv", "omega_tg_hz", 978.0, 998.0),
        ("baseline-fft", "spectrum.csv", "omega_tg_hz", 820.0, 1060.0),
        ("baseline-lsq", "fit.csv", "params_hz", 900.0, 995.0),
    ] {
        let dir = tmp.path().join(mode);
        let o = qmag(&["--mode", mode, "--data", &data], &dir);
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.join(file).exists());
        let s = summary(&dir);
        let v = s["results"][key].as_f64().or_else(|| s["results"][key][0].as_f64()).unwrap();
        assert!((lo..=hi).contains(&v), "{mode}: {v}");
        assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
        assert!(s["build"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    }
}

#[test]
fn reproduce_reports_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qmag(&["--mode", "reproduce", "--case", "fig-s5"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fig-s5_report.json")).unwrap()).unwrap();
    assert_eq!(report["case"], "fig-s5");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(tmp.path().join("fig-s5_posterior_truncated.csv").exists());

    // The N_m = 1 Case I row misses its reference value, so the table fails.
    let o = qmag(&["--mode", "reproduce", "--case", "case-i"], tmp.path());
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(o.status.code(), Some(2), "{table}");
    assert!(table.contains("FAIL") && table.contains("N_m=4 Omega_est"));
    assert_eq!(table.lines().filter(|l| l.contains("PASS")).count() + table.lines().filter(|l| l.contains("FAIL")).count(), 12);
}

#[test]
fn print_config_shows_merged_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"mcmc": {"n_mc": 500}, "prior": {"xi": null}}"#).unwrap();
    let o = qmag(&["--preset", "case-ii", "--config", cfg.to_str().unwrap(), "--seed", "3", "--print-config"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mcmc"]["n_mc"], 500);
    assert_eq!(v["mcmc"]["n_chains"], 5);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["signal"]["omega_tg_hz"], 12000.0);
    assert!(v["prior"].get("xi").is_none());
    assert!(!tmp.path().join("summary.json").exists());
}
