use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rosenblatt_cli::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rosenblatt"))
}

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    bin()
        .args(args)
        .arg("--config")
        .arg(&path)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn small(dir: &Path, extra: &str) -> String {
    format!(
        "output = \"{}\"\n{extra}\n[domain]\nleft_cut = 64.0\ncells = 64\n[simulation]\nsamples = 30\ntime_levels = 4\n[analysis]\nlocaltime_paths = 3\nlocaltime_levels = 6\nberman_levels = 4\n",
        dir.join("out").display()
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_config_is_the_default() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn validate_accepts_the_default_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["validate"], &small(dir.path(), ""));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("out/validate/summary.json").exists());
}

#[test]
fn validate_reports_gamma_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(
        dir.path(),
        "[profile]\nkind = \"constant\"\nh1 = 0.6\nh2 = 0.8\nhorizon = 1.0\ngamma = 0.65\n",
    );
    let o = run(dir.path(), &["validate"], &cfg);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["validate"], "seed = 1\n[domain\ncells = 3\n");
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("line 2"), "{e}");
}

#[test]
fn bad_domain_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "").replace("cells = 64", "cells = 0");
    let o = run(dir.path(), &["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_and_embeds_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "");
    let csv = dir.path().join("out/simulate/paths.csv");
    assert_eq!(run(dir.path(), &["simulate"], &cfg).status.code(), Some(0));
    let first = std::fs::read(&csv).unwrap();
    assert_eq!(
        run(dir.path(), &["simulate", "--threads", "1"], &cfg).status.code(),
        Some(0)
    );
    assert_eq!(first, std::fs::read(&csv).unwrap());
    let text = String::from_utf8(first).unwrap();
    let hash = ExperimentConfig::parse(&cfg).unwrap().effective(None, false).hash();
    assert!(text.contains(&format!("config_hash={hash}")));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/simulate/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], hash);
    assert_eq!(summary["samples"], 30);

    assert_eq!(
        run(dir.path(), &["simulate", "--seed", "5"], &cfg).status.code(),
        Some(0)
    );
    assert_ne!(text.as_bytes(), std::fs::read(&csv).unwrap());
}

#[test]
fn zero_samples_write_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "").replace("samples = 30", "samples = 0");
    let o = run(dir.path(), &["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/simulate/paths.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 1);
    assert!(body[0].starts_with("sample,"));
}

#[test]
fn multifractional_simulation_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(
        dir.path(),
        "[profile]\nkind = \"affine\"\nslope1 = 0.1\nslope2 = 0.0\nh1 = 0.6\nh2 = 0.8\nhorizon = 1.0\ngamma = 0.9\n",
    );
    let o = run(dir.path(), &["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = std::fs::read_to_string(dir.path().join("out/simulate/summary.json")).unwrap();
    assert!(s.contains("\"profile\""), "{s}");
}

#[test]
fn spectrum_and_localtime_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "");
    let o = run(dir.path(), &["spectrum"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cf = std::fs::read_to_string(dir.path().join("out/spectrum/cf.csv")).unwrap();
    assert_eq!(cf.lines().filter(|l| !l.starts_with('#')).count(), 42);
    assert!(cf.contains("config_hash="));

    let o = run(dir.path(), &["localtime"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "berman.json",
        "summary.json",
        "histogram_level4.csv",
        "histogram_level6.csv",
    ] {
        assert!(dir.path().join("out/localtime").join(f).exists(), "{f}");
    }
}

#[test]
fn missing_config_file_is_a_validation_failure() {
    let o = bin()
        .args(["validate", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
