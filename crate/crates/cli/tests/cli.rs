use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ytower(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ytower"));
    cmd.args(args).env_remove("OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn ytower")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.conf");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "map = logistic\nparams = 4\nell = 2\nstages = analyze\norbit_depth = 1000\n";

#[test]
fn missing_ell_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "map = logistic\nparams = 4\n");
    let out = ytower(&["analyze", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ell"));
}

#[test]
fn mismatched_ell_and_bad_flags_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "map = logistic\nparams = 4\nell = 3\n");
    assert_eq!(
        ytower(&["analyze", "--config", &cfg], &[]).status.code(),
        Some(64)
    );
    assert_eq!(ytower(&["analyze", "--bogus"], &[]).status.code(), Some(64));
    assert_eq!(ytower(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn renormalizable_map_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "map = logistic\nparams = 3.2\nell = 2\n");
    let out_dir = dir.path().join("out");
    let out = ytower(
        &[
            "induce",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("hypothesis violated") && err.contains("renormalizable"),
        "{err}"
    );
}

#[test]
fn report_without_artifacts_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("empty");
    let out = ytower(
        &[
            "report",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let env_dir = dir.path().join("from_env");
    let flag_dir = dir.path().join("from_flag");
    let out = ytower(&["analyze", "--config", &cfg], &[("OUTPUT_DIR", &env_dir)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(env_dir.join("analyze.json").exists());
    let out = ytower(
        &[
            "analyze",
            "--config",
            &cfg,
            "--out",
            flag_dir.to_str().unwrap(),
        ],
        &[("OUTPUT_DIR", &env_dir)],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(flag_dir.join("analyze.json").exists());
}

#[test]
fn analyze_summary_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = ytower(
        &["all", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("(*) verdict        converged"), "{table}");
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["map"], "logistic");
    assert_eq!(s["star_verdict"], "converged");
    assert!(s["R_tail"].is_null() && s["runtime_sec"].is_null());
    let csv = fs::read_to_string(out_dir.join("critical_orbit_0.csv")).unwrap();
    assert!(csv.starts_with("n,logD,gamma,b,d,dist_to_C\n1,"));
    assert_eq!(csv.lines().count(), 1001);
}
