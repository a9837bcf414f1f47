use std::fs;

use dgline::error::Error;
use dgline::study::{config_from_metadata, run_elliptic, run_parabolic, run_study, RunOptions, StudyConfig};

const SMALL: &str = r#"
domain = { lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 0.25] }
levels = [[3, 3, 1], [6, 6, 2]]
exact = "log-line"

[curve]
kind = "line"
a = [0.6666666666666666, 0.3333333333333333, 0.0]
b = [0.6666666666666666, 0.3333333333333333, 0.25]

[discretization]
k = 1

[[regions]]
name = "C1"
lo = [0.0, 0.0, 0.0]
hi = [0.3333333333333333, 0.3333333333333333, 0.25]
"#;

const HEAT: &str = r#"
mode = "parabolic"
domain = { lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 0.25] }
levels = [[4, 4, 1]]

[curve]
kind = "sine"
amplitude = 0.1
periods = 1.0
axis = 2
samples = 16

[source]
kind = "expression"
expr = "1.0 + s"

[discretization]
k = 1

[parabolic]
t_final = 2.0
steps = 8
u0 = { kind = "expression", expr = "x * (1.0 - x)" }
snapshot_every = 4
compare_steady_state = true
steady_state_tolerance = 1e-3
"#;

fn opts(dir: &std::path::Path, vtk: bool) -> RunOptions {
    RunOptions { out_dir: dir.to_path_buf(), vtk }
}

#[test]
fn csv_output_is_deterministic() {
    let cfg = StudyConfig::from_toml(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_study(&cfg, &opts(a.path(), true)).unwrap();
    run_study(&cfg, &opts(b.path(), true)).unwrap();
    for name in ["errors.csv", "rates.csv", "rates.txt", "solution_level1.vtk"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    let csv = fs::read_to_string(a.path().join("errors.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "k,level,nx,ny,nz,h,n_dof,iterations,residual,err_l2_global,err_l2_C1,err_dg_global,err_dg_C1,h_fh_l2"
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn metadata_round_trips() {
    let cfg = StudyConfig::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_elliptic(&cfg, &opts(dir.path(), false)).unwrap();
    assert!(!dir.path().join("solution_level0.vtk").exists());
    let meta = fs::read_to_string(dir.path().join("metadata.toml")).unwrap();
    assert_eq!(config_from_metadata(&meta).unwrap(), cfg);
    assert_eq!(StudyConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    for k in 1..=3 {
        let b = StudyConfig::benchmark(k);
        assert_eq!(StudyConfig::from_toml(&b.to_toml()).unwrap(), b);
    }
}

#[test]
fn schema_errors() {
    let tau_too_large = HEAT.replace("steps = 8", "tau = 3.0");
    let err = StudyConfig::from_toml(&tau_too_large).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("exceeds")), "{err}");
    assert!(StudyConfig::from_toml(&HEAT.replace("steps = 8", "steps = 8\ntau = 0.25")).is_err());

    let unknown = SMALL.replace("k = 1", "k = 1\nfoo = 2");
    let msg = StudyConfig::from_toml(&unknown).unwrap_err().to_string();
    assert!(msg.contains("line 13"), "{msg}");
    assert!(msg.contains("foo"), "{msg}");

    let bad_expr = HEAT.replace("1.0 + s", "1.0 + x");
    assert!(StudyConfig::from_toml(&bad_expr).is_err());
    assert!(StudyConfig::from_toml(&SMALL.replace("k = 1", "k = 1\nsigma = 1.0")).is_err());
    assert!(StudyConfig::from_toml(&SMALL.replace("exact = \"log-line\"", "exact = \"log-line\"\nmode = \"parabolic\"")).is_err());
}

#[test]
fn failed_rate_assertion_is_reported() {
    let text = format!("{SMALL}\n[[assert_rate]]\ncolumn = \"err_l2_C1\"\nmin = 5.0\n");
    let cfg = StudyConfig::from_toml(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_study(&cfg, &opts(dir.path(), false)).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert!(fs::read_to_string(dir.path().join("rates.txt")).unwrap().contains("FAILED"));
    let r = report.rates_of("err_l2_C1").unwrap()[0];
    assert!(r > 1.0, "{r}");

    let single = StudyConfig::from_toml(&SMALL.replace("levels = [[3, 3, 1], [6, 6, 2]]", "levels = [[3, 3, 1]]")).unwrap();
    assert!(run_study(&single, &opts(dir.path(), false)).is_err());
}

#[test]
fn parabolic_run_writes_outputs() {
    let cfg = StudyConfig::from_toml(HEAT).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_parabolic(&cfg, &opts(dir.path(), true)).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let l = &report.levels[0];
    assert!(l.steady_state_distance.unwrap() < 1e-3);
    assert!(l.max_stability_ratio <= 1.0);
    let csv = fs::read_to_string(dir.path().join("stability_level0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    for step in [0, 4, 8] {
        assert!(dir.path().join(format!("snapshot_level0_step{step:05}.vtk")).exists());
    }
    let meta = fs::read_to_string(dir.path().join("metadata.toml")).unwrap();
    assert_eq!(config_from_metadata(&meta).unwrap(), cfg);
    assert!(run_elliptic(&cfg, &opts(dir.path(), false)).is_err());
}
