use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rosenblatt::hurst::{validate_profile, DEFAULT_GRID_POINTS};
use rosenblatt::kernel::discretize_kernel;
use rosenblatt::localtime::{berman_gaps, berman_integral, estimate_local_time, l2_mass, path_range, BermanOptions};
use rosenblatt::paths::{
    dyadic_grid, increment_kernel, simulate_multifractional_with, simulate_rosenblatt_with, PathEnsemble, SimOptions,
};
use rosenblatt::spectral::{cumulants, eigen_decompose, nondegeneracy_check, write_cf_csv};
use rosenblatt::stats::alpha_grid;
use rosenblatt::suite::{criterion_title, write_table, ResultRow, Workspace, CRITERIA};
use rosenblatt::{Error as CoreError, Execution};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{failed} of {total} verification rows did not behave as registered")]
    Verification { failed: usize, total: usize },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Validation(_) => EXIT_VALIDATION,
                Failure::Verification { .. } => EXIT_VERIFICATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::InvalidParameter(_)
                | CoreError::HurstOutOfRange { .. }
                | CoreError::LengthMismatch { .. }
                | CoreError::DomainMismatch(_)
                | CoreError::EmptyInterval(_)
                | CoreError::Io(_) => EXIT_VALIDATION,
                _ => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_NUMERICAL
}

/// Everything a command needs besides the config.
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub exec: Execution,
}

impl Run {
    pub fn new(config: ExperimentConfig, exec: Execution) -> Self {
        let hash = config.hash();
        Self { config, hash, exec }
    }

    fn dir(&self, command: &str) -> Result<PathBuf> {
        let d = self.config.output.join(command);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn meta(&self, command: &str) -> Vec<(&'static str, String)> {
        vec![
            ("command", command.to_string()),
            ("config_hash", self.hash.clone()),
            ("seed", self.config.seed.to_string()),
        ]
    }

    fn meta_line(&self, command: &str) -> String {
        self.meta(command)
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn sim(&self) -> SimOptions {
        SimOptions {
            tol: self.config.simulation.matrix_tol,
            exec: self.exec,
        }
    }

    fn simulate(&self, times: &[f64], n: usize, seed: u64) -> Result<PathEnsemble> {
        let c = &self.config;
        let domain = c.build_domain()?;
        let e = if c.profile.is_constant() {
            simulate_rosenblatt_with(&c.profile.base_pair()?, times, &domain, n, seed, &self.sim())?
        } else {
            simulate_multifractional_with(&c.profile, times, &domain, n, seed, &self.sim())?
        };
        Ok(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_summary<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_validate(run: &Run) -> Result<()> {
    let c = &run.config;
    let report = validate_profile(&c.profile, DEFAULT_GRID_POINTS)?;
    let domain = if report.pass { Some(c.build_domain()) } else { None };
    let domain_error = match &domain {
        Some(Err(e)) => Some(format!("{e:#}")),
        _ => None,
    };
    let dir = run.dir("validate")?;
    write_summary(
        &dir.join("summary.json"),
        &json!({
            "config_hash": run.hash,
            "seed": c.seed,
            "profile": c.profile,
            "report": report,
            "left_cut": domain.as_ref().and_then(|d| d.as_ref().ok()).map(|d| d.left_cut()),
            "domain_error": domain_error,
        }),
    )?;
    if let Some(v) = report.first_violation() {
        return Err(Failure::Validation(v.to_string()).into());
    }
    let domain = domain.expect("built when the profile passes")?;
    if c.profile.horizon != domain.horizon() {
        return Err(Failure::Validation("profile and domain horizons differ".into()).into());
    }
    println!(
        "profile ok: {:?} h1={} h2={} gamma={} on [0, {}]; domain L={} cells={} inner={}",
        c.profile.shape,
        c.profile.h1,
        c.profile.h2,
        c.profile.gamma,
        c.profile.horizon,
        domain.left_cut(),
        domain.cells(),
        domain.inner_cells()
    );
    Ok(())
}

pub fn cmd_simulate(run: &Run) -> Result<()> {
    let c = &run.config;
    let start = Instant::now();
    let times = c.times();
    let e = run.simulate(&times, c.simulation.samples, c.seed)?;
    let dir = run.dir("simulate")?;
    let mut w = create(&dir.join("paths.csv"))?;
    e.write_csv(&mut w, &run.meta("simulate"))?;
    w.flush()?;
    let last = times.len() - 1;
    let col = e.column(last);
    let (mean, var) = mean_var(&col);
    write_summary(
        &dir.join("summary.json"),
        &json!({
            "config_hash": run.hash,
            "seed": c.seed,
            "samples": e.samples(),
            "times": times.len(),
            "source": e.source(),
            "left_cut": e.domain().left_cut(),
            "cells": e.domain().cells(),
            "final_time": times[last],
            "final_mean": mean,
            "final_variance": var,
        }),
    )?;
    println!(
        "simulated {} paths on {} times in {:.1}s -> {}",
        e.samples(),
        times.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn mean_var(x: &[f64]) -> (Option<f64>, Option<f64>) {
    if x.len() < 2 {
        return (x.first().copied(), None);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some(v))
}

pub fn cmd_spectrum(run: &Run) -> Result<()> {
    let c = &run.config;
    let t = c.analysis.spectrum_time.unwrap_or(c.profile.horizon);
    let pair = c.profile.pair_at(t)?;
    let domain = c.build_domain()?;
    let km = discretize_kernel(&pair, t, &domain, c.simulation.matrix_tol)?;
    let spec = eigen_decompose(&km, c.analysis.rank)?;
    let nondeg = nondegeneracy_check(&pair, t, &domain, c.analysis.nondegeneracy_threshold)?;
    let sigma = spec.variance().sqrt();
    let h = c.analysis.cf_half_width;
    let alphas: Vec<f64> = alpha_grid(-h, h, c.analysis.cf_points)
        .iter()
        .map(|a| a / sigma)
        .collect();

    let dir = run.dir("spectrum")?;
    let meta = run.meta_line("spectrum");
    let mut w = create(&dir.join("eigenvalues.csv"))?;
    spec.write_csv(&mut w, &meta)?;
    w.flush()?;
    let mut w = create(&dir.join("cf.csv"))?;
    write_cf_csv(&mut w, &spec, &alphas, &meta)?;
    w.flush()?;
    let k: Vec<f64> = (2..=4).map(|m| cumulants(&spec, m)).collect::<Result<_, _>>()?;
    write_summary(
        &dir.join("summary.json"),
        &json!({
            "config_hash": run.hash,
            "seed": c.seed,
            "t": t,
            "pair": [pair.h1(), pair.h2()],
            "rank": spec.truncation_rank,
            "residual_mass": spec.residual_mass,
            "total_mass": spec.total_mass,
            "variance": spec.variance(),
            "cumulants_2_to_4": k,
            "leading": spec.lambdas.iter().take(10).collect::<Vec<_>>(),
            "nondegeneracy": nondeg,
            "nondegenerate": nondeg.pass(),
        }),
    )?;
    println!(
        "spectrum at t={t}: rank {} residual {:.3e}, {} eigenvalues above {:e} lambda_1 -> {}",
        spec.truncation_rank,
        spec.residual_mass,
        nondeg.k_positive,
        c.analysis.nondegeneracy_threshold,
        dir.display()
    );
    Ok(())
}

pub fn cmd_localtime(run: &Run) -> Result<()> {
    let c = &run.config;
    let a = &c.analysis;
    let horizon = c.profile.horizon;
    let times = dyadic_grid(horizon, a.localtime_levels);
    let e = run.simulate(&times, a.localtime_paths, c.seed)?;
    let dir = run.dir("localtime")?;

    let mut l2 = vec![0.0; a.bin_levels.len()];
    for i in 0..e.samples() {
        let path = e.path(i);
        let (lo, hi) = path_range(&times, path, 0.0, horizon)?;
        for (k, &level) in a.bin_levels.iter().enumerate() {
            let hist = estimate_local_time(&times, path, 0.0, horizon, (hi - lo) * 2f64.powi(-level))?;
            l2[k] += l2_mass(&hist) / e.samples() as f64;
            if i == 0 {
                let mut w = create(&dir.join(format!("histogram_level{level}.csv")))?;
                hist.write_csv(&mut w, &run.meta_line("localtime"))?;
                w.flush()?;
            }
        }
    }

    let domain = c.build_domain()?;
    let profile = c.profile;
    let tol = c.simulation.matrix_tol;
    let report = berman_integral(
        |s, t| eigen_decompose(&increment_kernel(&profile, s, t, &domain, tol)?.g, None),
        horizon,
        &berman_gaps(horizon, a.berman_levels),
        &BermanOptions::default(),
        run.exec,
    )?;
    let mut w = create(&dir.join("berman.json"))?;
    report.write_json(&mut w)?;
    w.flush()?;
    let drift = (l2.len() >= 2).then(|| (l2[l2.len() - 1] - l2[0]).abs() / l2[0]);
    write_summary(
        &dir.join("summary.json"),
        &json!({
            "config_hash": run.hash,
            "seed": c.seed,
            "paths": e.samples(),
            "times": times.len(),
            "bin_levels": a.bin_levels,
            "mean_l2_mass": l2,
            "l2_drift": drift,
            "berman_total": report.total,
            "berman_tail_exponent": report.tail_exponent,
            "berman_diagonal_exponent": report.diagonal_fit.slope,
            "berman_finite": report.finite,
        }),
    )?;
    println!(
        "local time on {} paths: mean l2 mass {:?}; Berman total {:.4} (tail {:.3}, diagonal {:.3}) -> {}",
        e.samples(),
        l2,
        report.total,
        report.tail_exponent,
        report.diagonal_fit.slope,
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionLine {
    pub criterion: u8,
    pub title: &'static str,
    pub rows: usize,
    pub ok: bool,
}

/// Groups rows by criterion; a criterion is ok when all its rows behave as
/// registered.
pub fn criterion_lines(rows: &[ResultRow]) -> Vec<CriterionLine> {
    CRITERIA
        .iter()
        .map(|&c| {
            let mine: Vec<_> = rows.iter().filter(|r| r.criterion == c).collect();
            CriterionLine {
                criterion: c,
                title: criterion_title(c),
                rows: mine.len(),
                ok: !mine.is_empty() && mine.iter().all(|r| r.ok()),
            }
        })
        .collect()
}

/// First unused invocation number in the verify directory.
fn next_invocation(dir: &Path) -> Result<u32> {
    let mut n = 1;
    while dir.join(format!("table_{n:04}.csv")).exists() {
        n += 1;
    }
    Ok(n)
}

pub struct VerifyOutcome {
    pub table: PathBuf,
    pub rows: Vec<ResultRow>,
    pub lines: Vec<CriterionLine>,
}

/// Runs the suite and writes the table; does not decide the exit code.
pub fn run_verify(run: &Run) -> Result<VerifyOutcome> {
    let c = &run.config;
    let mut ws = Workspace::new(c.suite.clone(), run.exec)?;
    let rows = ws.run_all()?;
    let lines = criterion_lines(&rows);
    let dir = run.dir("verify")?;
    let n = next_invocation(&dir)?;
    let table = dir.join(format!("table_{n:04}.csv"));
    let mut w = create(&table)?;
    for (k, v) in run.meta("verify") {
        writeln!(w, "# {k}={v}")?;
    }
    write_table(&mut w, &rows)?;
    w.flush()?;
    write_summary(
        &dir.join(format!("summary_{n:04}.json")),
        &json!({
            "config_hash": run.hash,
            "seed": c.seed,
            "quick": c.quick,
            "criteria": lines,
            "failed_rows": rows.iter().filter(|r| !r.ok()).map(|r| &r.id).collect::<Vec<_>>(),
        }),
    )?;
    Ok(VerifyOutcome { table, rows, lines })
}

pub fn cmd_verify(run: &Run) -> Result<()> {
    let start = Instant::now();
    let out = run_verify(run)?;
    for l in &out.lines {
        println!(
            "criterion {:>2} {:<45} {}",
            l.criterion,
            l.title,
            if l.ok { "PASS" } else { "FAIL" }
        );
    }
    for r in out.rows.iter().filter(|r| !r.ok()) {
        println!(
            "  failed row {}: statistic {:.6} target {:.6} {}",
            r.id, r.statistic, r.target, r.note
        );
    }
    println!(
        "table {} written in {:.1}s",
        out.table.display(),
        start.elapsed().as_secs_f64()
    );
    let failed = out.rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(Failure::Verification {
            failed,
            total: out.rows.len(),
        }
        .into());
    }
    Ok(())
}
