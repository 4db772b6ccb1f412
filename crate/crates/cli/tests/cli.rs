use std::path::Path;
use std::process::{Command, Output};

fn combsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_combsim")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn threshold_grid_has_one_row_per_detuning() {
    let dir = tempfile::tempdir().unwrap();
    let o = combsim(&["threshold", "--preset", "desk-scale", "--detuning", "0.4:1.6:25"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 25);
    let th: Vec<f64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    // V-shaped minimum around the first mechanical frequency
    let imin = (0..th.len()).min_by(|&a, &b| th[a].total_cmp(&th[b])).unwrap();
    let d = 0.4 + 0.05 * imin as f64;
    assert!((d - 1.0).abs() <= 0.1, "minimum at {d}");
    assert!(th[0] > th[imin] + 2.0 && th[24] > th[imin] + 10.0);
}

#[test]
fn classify_synthetic_hybrid() {
    let dir = tempfile::tempdir().unwrap();
    let (f1, f2) = (756e3, 1.75e6);
    let mut teeth = Vec::new();
    for k in -2..=2 {
        for s in [-1.0, 0.0, 1.0] {
            let d = k as f64 * f2 + s * f1;
            teeth.push(serde_json::json!({"freq_hz": 5.31e9 + d, "power_dbm": -70.0, "detuning_hz": d}));
        }
    }
    std::fs::write(dir.path().join("teeth.json"), serde_json::to_string(&teeth).unwrap()).unwrap();
    let o = combsim(&["classify", "--teeth", "teeth.json", "--fm1", "756e3", "--fm2", "1.75e6"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["regime"], "Hybrid");
    assert_eq!(v["teeth"].as_array().unwrap().len(), 15);
    assert!((v["dominant_spacing_hz"].as_f64().unwrap() - f2).abs() < 1e-6);
}

#[test]
fn simulate_below_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = combsim(&["simulate", "--preset", "desk-scale", "--detuning", "1", "--power", "-80", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("SinglePeak"));
    for f in ["trajectory.csv", "spectrum.csv", "teeth.json", "classification.json", "report.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/classification.json")).unwrap()).unwrap();
    assert_eq!(c["regime"], "SinglePeak");
}

#[test]
fn sweep_writes_maps_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
preset = "desk-scale"
[sweep]
detuning = { values = [0.8, 1.0] }
power = { start = -90.0, stop = -85.0, step = 5.0 }
parallelism = 2
"#;
    std::fs::write(dir.path().join("plan.toml"), cfg).unwrap();
    let o = combsim(&["sweep", "--config", "plan.toml", "--out", "maps"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("maps/map.csv")).unwrap();
    assert!(csv.contains("# preset: desk-scale") && csv.contains("# config_sha256: "));
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 1 + 4);
    assert!(data[1..].iter().all(|l| l.contains(",SinglePeak,")));
    assert!(dir.path().join("maps/map.json").is_file());
    assert!(dir.path().join("maps/threshold.csv").is_file());
}

#[test]
fn analytic_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = combsim(&["analytic", "--detuning", "1", "--power", "-80", "--beta", "2", "--kmax", "4"], dir.path());
    assert!(o.status.success());
    let rows = stdout(&o).lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(combsim(&["--no-such-flag"], dir.path()).status.code(), Some(2));
    assert_eq!(combsim(&["simulate", "--preset", "nope", "--detuning", "1", "--power", "-80"], dir.path()).status.code(), Some(2));
    assert_eq!(combsim(&["simulate", "--power", "-80"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[pipeline]\nmargin_db = 1.0\n").unwrap();
    assert_eq!(combsim(&["threshold", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(combsim(&["classify", "--teeth", "missing.json", "--fm1", "1", "--fm2", "2"], dir.path()).status.code(), Some(2));
    // an ambiguous lattice is a numerical failure, not a config error
    std::fs::write(dir.path().join("t.json"), r#"[{"freq_hz": 2000.0, "power_dbm": 0.0, "detuning_hz": 2000.0}]"#).unwrap();
    let o = combsim(&["classify", "--teeth", "t.json", "--fm1", "1000", "--fm2", "2000.5", "--tol-hz", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
