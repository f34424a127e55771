use std::path::Path;
use std::process::{Command, Output};

fn passkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_passkit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PASSKIT_SCENARIO")
        .env_remove("PASSKIT_SEED")
        .env_remove("PASSKIT_OUT")
        .env_remove("PASSKIT_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scaling_law_schema_and_approximation_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["run", "scaling-law"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("scaling-law.csv")).unwrap();
    assert!(csv.starts_with("M,P_opt,P_approx,ratio\n"));
    assert!(!csv.contains('\r'));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scaling-law.manifest.json")).unwrap()).unwrap();
    for key in ["version", "seed", "wall_time_s", "tolerances", "params", "sweep"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    let csv_path = dir.path().join("scaling-law.csv");
    let v = passkit(&["verify", csv_path.to_str().unwrap(), "theorem1-5pct"], dir.path());
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).starts_with("PASS theorem1-5pct"));
}

#[test]
fn outage_gap_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["run", "outage", "--set", "samples=2000"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = dir.path().join("outage.csv");
    let v = passkit(&["verify", csv.to_str().unwrap(), "delta-b-positive"], dir.path());
    assert!(v.status.success(), "{}", stdout(&v));
}

#[test]
fn capacity_regions_are_nested() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["run", "capacity-sp"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = dir.path().join("capacity-sp.csv");
    let v = passkit(&["verify", csv.to_str().unwrap(), "nesting"], dir.path());
    assert!(v.status.success(), "{}", stdout(&v));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "M,P_opt,P_approx,ratio\n2,1.0,0.5,0\n").unwrap();
    let v = passkit(&["verify", csv.to_str().unwrap(), "theorem1-5pct"], dir.path());
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).starts_with("FAIL"));
}

#[test]
fn rerun_with_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = passkit(&["--seed", "5", "run", "ergodic", "--set", "samples=5000"], out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let x = std::fs::read(a.join("ergodic.csv")).unwrap();
    let y = std::fs::read(b.join("ergodic.csv")).unwrap();
    assert_eq!(x, y);
    let c = dir.path().join("c");
    passkit(&["--seed", "6", "run", "ergodic", "--set", "samples=5000"], &c);
    assert_ne!(x, std::fs::read(c.join("ergodic.csv")).unwrap());
}

#[test]
fn unknown_experiment_and_check_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["run", "no-such-thing"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment"), "{}", stderr(&o));
    let csv = dir.path().join("x.csv");
    std::fs::write(&csv, "a\n1\n").unwrap();
    let v = passkit(&["verify", csv.to_str().unwrap(), "bogus"], dir.path());
    assert_eq!(v.status.code(), Some(2));
    assert!(stderr(&v).contains("unknown check"));
}

#[test]
fn bad_scenario_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("bad.toml");
    std::fs::write(&toml, "[constants]\nwavelength = \"ten\"\n").unwrap();
    let o = passkit(&["--scenario", toml.to_str().unwrap(), "run", "scaling-law"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn sweep_override_and_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["run", "scaling-law", "--sweep", "m=2,4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("scaling-law.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let bad = passkit(&["run", "scaling-law", "--sweep", "zeta=1:1:3"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn list_experiments_names_all() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["list-experiments"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["scaling-law", "ergodic", "outage", "capacity-sp", "capacity-mp", "mu-wsr", "wideband", "csi-nmse", "beam-train"] {
        assert!(text.contains(id), "{id}");
    }
}

#[test]
fn env_overrides_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_passkit"))
        .args(["run", "scaling-law", "--sweep", "m=2"])
        .env("PASSKIT_OUT", dir.path())
        .env("PASSKIT_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("scaling-law.manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 42"));
}

#[test]
fn tools_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = passkit(&["optimize", "single", "--m", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("optimize-single.json").exists());
    assert!(dir.path().join("optimize-single-trace.csv").exists());
    let o = passkit(&["csi", "estimate", "--method", "seq", "--trials", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("csi-estimate-seq.csv")).unwrap();
    assert!(csv.starts_with("seed,method,overhead,nmse_db\n"));
    let o = passkit(
        &["metric", "sweep", "--metric", "ergodic-pass", "--values", "10,20"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("metric-ergodicpass.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
