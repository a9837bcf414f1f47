use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dgline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgline")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn study_writes_artifacts_and_is_reproducible() {
    let cfg = configs().join("quick.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = dgline(&["study", path(&cfg), "--out-dir", path(dir.path()), "--threads", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["errors.csv", "rates.csv", "solution_level0.vtk", "solution_level1.vtk", "metadata.toml"] {
        assert!(a.path().join(name).exists(), "{name}");
    }
    assert_eq!(fs::read(a.path().join("errors.csv")).unwrap(), fs::read(b.path().join("errors.csv")).unwrap());
    let meta = fs::read_to_string(a.path().join("metadata.toml")).unwrap();
    let original = dgline::study::StudyConfig::load(&cfg).unwrap();
    assert_eq!(dgline::study::config_from_metadata(&meta).unwrap(), original);
}

#[test]
fn no_vtk_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgline(&["solve-elliptic", path(&configs().join("quick.toml")), "--out-dir", path(dir.path()), "--no-vtk"]);
    assert!(out.status.success());
    assert!(dir.path().join("errors.csv").exists());
    assert!(!dir.path().join("solution_level0.vtk").exists());
}

#[test]
fn failed_assertion_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("quick.toml")).unwrap();
    let cfg = dir.path().join("strict.toml");
    fs::write(&cfg, format!("{text}\n[[assert_rate]]\ncolumn = \"err_l2_global\"\nmin = 3.0\n")).unwrap();
    let out = dgline(&["study", path(&cfg), "--out-dir", path(&dir.path().join("out")), "--no-vtk"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("err_l2_global"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "domain = { lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 1.0] }\nlevels = [[2, 2, 2]]\nbogus = 1\n").unwrap();
    let out = dgline(&["solve-elliptic", path(&cfg), "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
}

#[test]
fn parabolic_and_file_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgline(&["solve-elliptic", path(&configs().join("polyline.toml")), "--out-dir", path(dir.path()), "--no-vtk"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(configs().join("heat_sine.toml")).unwrap();
    let cfg = dir.path().join("heat.toml");
    fs::write(&cfg, text.replace("[[4, 4, 4], [8, 8, 8]]", "[[4, 4, 4]]")).unwrap();
    let out = dgline(&["solve-parabolic", path(&cfg), "--out-dir", path(&dir.path().join("heat"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("heat/stability_level0.csv")).unwrap();
    assert!(csv.starts_with("step,time,l2,dg,iterations,stability,bound,ratio\n"));
    assert!(dir.path().join("heat/snapshot_level0_step00020.vtk").exists());
    assert!(dir.path().join("heat/summary.csv").exists());
}

#[test]
fn sine_curve_has_no_error_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgline(&["solve-elliptic", path(&configs().join("sine.toml")), "--out-dir", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(csv.starts_with("k,level,nx,ny,nz,h,n_dof,iterations,residual,h_fh_l2\n"), "{csv}");
    assert!(dir.path().join("solution_level1.vtk").exists());
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            dgline::study::StudyConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
