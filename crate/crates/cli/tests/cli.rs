use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn socsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socsim"))
        .args(args)
        .output()
        .expect("socsim runs")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_series_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let o = socsim(&[
        "run",
        arg(&scenario("oscillation.toml")),
        "--horizon",
        "600",
        "--out",
        arg(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let series = std::fs::read_to_string(out.path().join("series.csv")).unwrap();
    assert!(series.starts_with("time,lambda_in,lambda_adm,p,lambda_star,"));
    let summary = std::fs::read_to_string(out.path().join("summary.toml")).unwrap();
    assert!(summary.contains("horizon = 600"));
    assert!(out.path().join("compliance.csv").exists());
}

#[test]
fn overrides_are_echoed() {
    let out = tempfile::tempdir().unwrap();
    let o = socsim(&[
        "run",
        arg(&scenario("steady.toml")),
        "--policy",
        "tbac",
        "--seed",
        "9",
        "--horizon",
        "500",
        "--out",
        arg(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.path().join("summary.toml")).unwrap();
    assert!(summary.contains("seed = 9"));
    assert!(summary.contains("kind = \"tbac\""));
}

#[test]
fn compare_writes_one_directory_per_policy() {
    let out = tempfile::tempdir().unwrap();
    let o = socsim(&[
        "compare",
        arg(&scenario("oscillation.toml")),
        "--policies",
        "soc,tbac,pac",
        "--horizon",
        "800",
        "--out",
        arg(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["soc", "tbac", "pac"] {
        assert!(out.path().join(p).join("series.csv").exists());
    }
    let table = std::fs::read_to_string(out.path().join("comparison.txt")).unwrap();
    assert_eq!(table, String::from_utf8_lossy(&o.stdout));
}

#[test]
fn sweep_writes_a_row_per_value() {
    let out = tempfile::tempdir().unwrap();
    let o = socsim(&[
        "sweep",
        arg(&scenario("steady.toml")),
        "--param",
        "arrival_rate",
        "--values",
        "1,2",
        "--horizon",
        "500",
        "--out",
        arg(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.path().join("arrival_rate=1").join("summary.toml").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("steady.toml"))
        .unwrap()
        .replace("tier = \"db\"", "tier = \"dbx\"");
    std::fs::write(&bad, text).unwrap();
    let o = socsim(&["run", arg(&bad), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dbx") && err.contains("line"), "{err}");

    let o = socsim(&["run", arg(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = socsim(&["compare", arg(&scenario("steady.toml")), "--policies", "soc"]);
    assert_eq!(o.status.code(), Some(1));
    let o = socsim(&[
        "sweep",
        arg(&scenario("steady.toml")),
        "--param",
        "nope",
        "--values",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = socsim(&["run", arg(&scenario("steady.toml")), "--policy", "magic"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_rate_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idle.toml");
    let text = std::fs::read_to_string(scenario("steady.toml"))
        .unwrap()
        .replace("rate = 4.0", "rate = 0.0");
    std::fs::write(&path, text).unwrap();
    let o = socsim(&[
        "run",
        arg(&path),
        "--horizon",
        "600",
        "--out",
        arg(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let series = std::fs::read_to_string(dir.path().join("out").join("series.csv")).unwrap();
    assert!(
        series
            .lines()
            .skip(1)
            .all(|row| row.split(',').nth(1) == Some("0")),
        "{series}"
    );
}
