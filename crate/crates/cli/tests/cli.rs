use std::path::Path;
use std::process::{Command, Output};

fn cce(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cce")).current_dir(dir).env("CCE_THREADS", "1").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn round_solve_gives_zero_profile() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "round.cfg", "system = su\nn = 3\nphi0 = 1\n");
    let o = cce(d.path(), &["--config", &c, "--out", "out", "--quiet", "solve"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(d.path().join("out/profile.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 128);
    assert!(rows.iter().all(|r| r[1..5].iter().all(|v| v == "0")));
    let report = std::fs::read_to_string(d.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"schema_version\": \"1\""));
    assert!(report.contains("\"config_hash\""));
}

#[test]
fn su5_solve_passes_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "su5.cfg", "system = su\nn = 5\nphi0 = 0.8\n");
    for out in ["a", "b"] {
        let o = cce(d.path(), &["--config", &c, "--out", out, "solve"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["profile.csv", "report.json"] {
        assert_eq!(std::fs::read(d.path().join("a").join(f)).unwrap(), std::fs::read(d.path().join("b").join(f)).unwrap());
    }
    let o = cce(d.path(), &["--out", "v", "verify", "a/profile.csv", "b/profile.csv"]);
    assert_eq!(code(&o), 0);
    let v = std::fs::read_to_string(d.path().join("v/verification.json")).unwrap();
    assert!(v.contains("\"forces_zero\": true"));
    let o = cce(d.path(), &["--out", "e", "export", "a/profile.csv"]);
    assert_eq!(code(&o), 0);
    let curv = std::fs::read_to_string(d.path().join("e/profile.curvature.csv")).unwrap();
    assert!(curv.starts_with("x,radial-1,radial-2,"));
    assert!(d.path().join("e/profile.verification.json").exists());
}

#[test]
fn overrides_change_the_config_hash() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "su3.cfg", "system = su\nn = 3\nphi0 = 0.9\n");
    assert_eq!(code(&cce(d.path(), &["--config", &c, "--out", "a", "--quiet", "solve"])), 0);
    assert_eq!(code(&cce(d.path(), &["--config", &c, "--out", "b", "--grid", "64", "--tol", "1e-11", "--quiet", "solve"])), 0);
    let hash = |p: &str| {
        let t = std::fs::read_to_string(d.path().join(p).join("report.json")).unwrap();
        t.lines().find(|l| l.contains("config_hash")).unwrap().to_string()
    };
    assert_ne!(hash("a"), hash("b"));
}

#[test]
fn input_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let bad = config(d.path(), "bad.cfg", "system = su\nn = 4\nphi0 = 0.8\n");
    let o = cce(d.path(), &["--config", &bad, "solve"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("`n`") && err.contains("n must be odd"), "{err}");
    let neg = config(d.path(), "neg.cfg", "system = su\nn = 5\nphi0 = -1\n");
    assert_eq!(code(&cce(d.path(), &["--config", &neg, "solve"])), 3);
    assert_eq!(code(&cce(d.path(), &["--config", "missing.cfg", "solve"])), 3);
    assert_eq!(code(&cce(d.path(), &["solve"])), 3);
    assert_eq!(code(&cce(d.path(), &["frobnicate"])), 3);
    assert_eq!(code(&cce(d.path(), &["verify", "nope.csv"])), 3);
    std::fs::write(d.path().join("junk.csv"), "x,y\n1,2\n").unwrap();
    assert_eq!(code(&cce(d.path(), &["verify", "junk.csv"])), 3);
    assert_eq!(code(&cce(d.path(), &["--help"])), 0);
}

#[test]
fn unwritable_output_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "round.cfg", "system = su\nn = 3\nphi0 = 1\n");
    std::fs::write(d.path().join("occupied"), "a file").unwrap();
    assert_eq!(code(&cce(d.path(), &["--config", &c, "--out", "occupied/sub", "solve"])), 3);
}

#[test]
fn solver_failure_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "far.cfg", "system = su\nn = 5\nphi0 = 0.8\nmax_iter = 1\n");
    assert_eq!(code(&cce(d.path(), &["--config", &c, "--quiet", "solve"])), 1);
}

#[test]
fn single_point_sweep() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "s.cfg", "system = su\nn = 3\nphi0 = 1\nsweep_end = 1\n");
    let o = cce(d.path(), &["--config", &c, "--out", "o", "sweep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    assert_eq!(data_rows(&t).len(), 1);
    assert!(t.contains("# stop_reason = path-end"));
    assert!(!d.path().join("o/event.json").exists());
}

#[test]
fn sweep_rows_are_monotone() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "s.cfg", "system = su\nn = 3\nphi0 = 1\nsweep_end = 0.5\nsweep_step = 0.05\n");
    assert_eq!(code(&cce(d.path(), &["--config", &c, "--out", "o", "--quiet", "sweep"])), 0);
    let t = std::fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    let lambdas: Vec<f64> = data_rows(&t).iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(lambdas.len() > 2);
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(*lambdas.last().unwrap(), 0.5);
    let k0: Vec<f64> = data_rows(&t).iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(k0.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn min_step_exhaustion_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "s.cfg", "system = su\nn = 3\nphi0 = 1\nmax_iter = 1\nsweep_end = 0.5\nsweep_min_step = 0.01\n");
    let o = cce(d.path(), &["--config", &c, "--out", "o", "sweep"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    assert!(t.contains("# stop_reason = min-step"));
}

#[test]
fn upward_sweep_writes_event() {
    let d = tempfile::tempdir().unwrap();
    let c = config(d.path(), "s.cfg", "system = su\nn = 3\nphi0 = 1\nsweep_end = 2.5\nsweep_step = 0.1\nevent_tol = 1e-4\n");
    let o = Command::new(env!("CARGO_BIN_EXE_cce")).current_dir(d.path()).env("CCE_THREADS", "3").args(["--config", &c, "--out", "o", "sweep"]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ev = std::fs::read_to_string(d.path().join("o/event.json")).unwrap();
    assert!(ev.contains("\"plane\""));
    let t = std::fs::read_to_string(d.path().join("o/trace.csv")).unwrap();
    assert!(t.contains("# stop_reason = event"));
}
