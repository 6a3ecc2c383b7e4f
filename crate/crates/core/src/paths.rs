//! Sample paths over a time grid, one shared noise draw per sample.
//!
//! For a constant pair the path is factorized through the s-nodes: with
//! Z_i(q) = sum_j P_i(j, s_q) dW_j,
//!
//!   Y(t) = sum_{s_q <= t} 2 w_q Z_1(q) Z_2(q) - sum_j F_t(j, j) S_j,
//!
//! which costs O(M Q) per sample for all times at once and makes increments
//! telescope exactly. Multifractional paths assemble F_t for the pair at each
//! time on one shared node set and evaluate batched quadratic forms.

use std::io::Write;

use serde::Serialize;

use crate::chaos::{quadratic_forms, sample_noise_batch, BLOCK};
use crate::domain::TruncatedDomain;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hurst::{validate_profile, HurstPair, HurstProfile, DEFAULT_GRID_POINTS};
use crate::kernel::{
    break_points, cell_average_matrix, discretize_increment, discretize_on_nodes, discretize_pair_difference,
    nodes_needed, s_nodes, KernelMatrix, DEFAULT_MATRIX_TOL,
};
use crate::linalg::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum PathSource {
    Pair { h1: f64, h2: f64 },
    Profile(HurstProfile),
}

#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    time_grid: Vec<f64>,
    /// samples x times, row-major.
    values: Vec<f64>,
    samples: usize,
    source: PathSource,
    domain: TruncatedDomain,
    /// Sample i uses noise stream (seed, i).
    seed: u64,
}

impl PathEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.time_grid
    }
    pub fn samples(&self) -> usize {
        self.samples
    }
    pub fn source(&self) -> PathSource {
        self.source
    }
    pub fn domain(&self) -> &TruncatedDomain {
        &self.domain
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn path(&self, i: usize) -> &[f64] {
        let n = self.time_grid.len();
        &self.values[i * n..(i + 1) * n]
    }
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.time_grid.len() + k]
    }
    /// All samples at time index k.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.value(i, k)).collect()
    }
    /// X_{t_b} - X_{t_a} for every sample.
    pub fn increments(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.value(i, b) - self.value(i, a)).collect()
    }

    /// Position of `t` in the grid (exact match).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.time_grid.iter().position(|&s| s == t)
    }

    /// One row per sample; the header lists the times.
    pub fn write_csv<W: Write>(&self, mut out: W, meta: &[(&str, String)]) -> Result<()> {
        for (k, v) in meta {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(
            out,
            "# seed={} cells={} left_cut={:?} refinement={}",
            self.seed,
            self.domain.cells(),
            self.domain.left_cut(),
            self.domain.refinement()
        )?;
        let src = serde_json::to_string(&self.source).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "# {src}")?;
        write!(out, "sample")?;
        for t in &self.time_grid {
            write!(out, ",{t:?}")?;
        }
        writeln!(out)?;
        for i in 0..self.samples {
            write!(out, "{i}")?;
            for v in self.path(i) {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Probe tolerance for the s-quadrature (see `discretize_kernel`).
    pub tol: f64,
    pub exec: Execution,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_MATRIX_TOL,
            exec: Execution::default(),
        }
    }
}

fn check_times(times: &[f64], domain: &TruncatedDomain) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0) || *t > domain.horizon()) {
        return Err(Error::InvalidParameter(format!(
            "times must lie in [0, {}]",
            domain.horizon()
        )));
    }
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidParameter("times must be strictly increasing".into()));
    }
    Ok(())
}

pub fn simulate_rosenblatt(
    pair: &HurstPair,
    times: &[f64],
    domain: &TruncatedDomain,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_rosenblatt_with(pair, times, domain, n, seed, &SimOptions::default())
}

pub fn simulate_rosenblatt_with(
    pair: &HurstPair,
    times: &[f64],
    domain: &TruncatedDomain,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    check_times(times, domain)?;
    let nt = times.len();
    let source = PathSource::Pair {
        h1: pair.h1(),
        h2: pair.h2(),
    };
    let mut values = vec![0.0; n * nt];
    let breaks = break_points(domain.edges(), times);
    if breaks.len() < 2 || n == 0 {
        return Ok(PathEnsemble {
            time_grid: times.to_vec(),
            values,
            samples: n,
            source,
            domain: domain.clone(),
            seed,
        });
    }
    let nodes = s_nodes(&breaks, nodes_needed(pair, domain, &breaks, opts.tol)?);
    let m = domain.cells();
    let q = nodes.s.len();
    let (a1, a2) = pair.exponents();
    let mut p1 = cell_average_matrix(domain.edges(), &nodes.s, a1);
    let p2 = cell_average_matrix(domain.edges(), &nodes.s, a2);
    let counts: Vec<usize> = times
        .iter()
        .map(|&t| if t == 0.0 { 0 } else { nodes.count_below(t) })
        .collect();

    // diagonal of F_t at every grid time
    let mut diag = vec![0.0; nt * m];
    for j in 0..m {
        let (r1, r2) = (&p1[j * q..(j + 1) * q], &p2[j * q..(j + 1) * q]);
        let mut acc = 0.0;
        let mut r = 0;
        for (k, &c) in counts.iter().enumerate() {
            while r < c {
                acc += 2.0 * nodes.w[r] * r1[r] * r2[r];
                r += 1;
            }
            diag[k * m + j] = acc;
        }
    }
    for j in 0..m {
        for r in 0..q {
            p1[j * q + r] *= 2.0 * nodes.w[r];
        }
    }
    if let Some(i) = p1.iter().chain(&p2).position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteKernel {
            row: (i % (m * q)) / q,
            col: 0,
        });
    }

    opts.exec.for_each_chunk(&mut values, BLOCK * nt, |ci, chunk| {
        let count = chunk.len() / nt;
        let batch = sample_noise_batch(domain, seed, ci * BLOCK, count);
        let mut z1 = vec![0.0; count * q];
        let mut z2 = vec![0.0; count * q];
        gemm(
            count, m, q, 1.0, &batch.dw, m as isize, 1, &p1, q as isize, 1, 0.0, &mut z1, q as isize, 1,
        );
        gemm(
            count, m, q, 1.0, &batch.dw, m as isize, 1, &p2, q as isize, 1, 0.0, &mut z2, q as isize, 1,
        );
        for i in 0..count {
            let (y1, y2) = (&z1[i * q..(i + 1) * q], &z2[i * q..(i + 1) * q]);
            let s = &batch.s[i * m..(i + 1) * m];
            let mut acc = 0.0;
            let mut r = 0;
            for (k, &c) in counts.iter().enumerate() {
                while r < c {
                    acc += y1[r] * y2[r];
                    r += 1;
                }
                let d: f64 = diag[k * m..(k + 1) * m].iter().zip(s).map(|(a, b)| a * b).sum();
                chunk[i * nt + k] = acc - d;
            }
        }
    });
    Ok(PathEnsemble {
        time_grid: times.to_vec(),
        values,
        samples: n,
        source,
        domain: domain.clone(),
        seed,
    })
}

pub fn simulate_multifractional(
    profile: &HurstProfile,
    times: &[f64],
    domain: &TruncatedDomain,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_multifractional_with(profile, times, domain, n, seed, &SimOptions::default())
}

pub fn simulate_multifractional_with(
    profile: &HurstProfile,
    times: &[f64],
    domain: &TruncatedDomain,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    let report = validate_profile(profile, DEFAULT_GRID_POINTS)?;
    if let Some(v) = report.first_violation() {
        return Err(Error::InvalidParameter(format!("profile rejected: {v}")));
    }
    if profile.horizon < domain.horizon() {
        return Err(Error::InvalidParameter(format!(
            "profile horizon {} shorter than domain horizon {}",
            profile.horizon,
            domain.horizon()
        )));
    }
    if profile.is_constant() {
        let mut ens = simulate_rosenblatt_with(&profile.base_pair()?, times, domain, n, seed, opts)?;
        ens.source = PathSource::Profile(*profile);
        return Ok(ens);
    }
    check_times(times, domain)?;
    let nt = times.len();
    let m = domain.cells();
    let source = PathSource::Profile(*profile);
    let mut values = vec![0.0; n * nt];
    let breaks = break_points(domain.edges(), times);
    if breaks.len() < 2 || n == 0 {
        return Ok(PathEnsemble {
            time_grid: times.to_vec(),
            values,
            samples: n,
            source,
            domain: domain.clone(),
            seed,
        });
    }
    // node count from the first, middle and last positive times
    let positive: Vec<f64> = times.iter().cloned().filter(|&t| t > 0.0).collect();
    let mut per_panel = 0;
    for &t in [positive[0], positive[positive.len() / 2], positive[positive.len() - 1]].iter() {
        let upto: Vec<f64> = breaks.iter().cloned().filter(|&b| b <= t).collect();
        per_panel = per_panel.max(nodes_needed(&profile.pair_at(t)?, domain, &upto, opts.tol)?);
    }
    let nodes = s_nodes(&breaks, per_panel);

    let noise: Vec<_> = opts.exec.map(n.div_ceil(BLOCK), |c| {
        let first = c * BLOCK;
        sample_noise_batch(domain, seed, first, BLOCK.min(n - first))
    });
    let mut column = vec![0.0; n];
    for (k, &t) in times.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let km = discretize_on_nodes(&profile.pair_at(t)?, t, domain, &nodes)?;
        opts.exec.for_each_chunk(&mut column, BLOCK, |c, out| {
            quadratic_forms(km.values(), m, &noise[c].dw, &noise[c].s, out);
        });
        for (i, v) in column.iter().enumerate() {
            values[i * nt + k] = *v;
        }
    }
    Ok(PathEnsemble {
        time_grid: times.to_vec(),
        values,
        samples: n,
        source,
        domain: domain.clone(),
        seed,
    })
}

/// Kernel of X_t - X_s split as g1 + g2 with
/// g1 = f_{H(t)}(t) - f_{H(t)}(s) and g2 = f_{H(t)}(s) - f_{H(s)}(s).
#[derive(Debug, Clone)]
pub struct IncrementKernel {
    pub g: KernelMatrix,
    pub g1: KernelMatrix,
    pub g2: KernelMatrix,
}

pub fn increment_kernel(
    profile: &HurstProfile,
    s: f64,
    t: f64,
    domain: &TruncatedDomain,
    tol: f64,
) -> Result<IncrementKernel> {
    let (ps, pt) = (profile.pair_at(s)?, profile.pair_at(t)?);
    let g1 = discretize_increment(&pt, s, t, domain, tol)?;
    let g2 = if ps == pt {
        KernelMatrix::zeros(domain, s)
    } else {
        discretize_pair_difference(&pt, &ps, s, domain, tol)?
    };
    let g = g1.combine(1.0, &g2, 1.0)?;
    Ok(IncrementKernel { g, g1, g2 })
}

/// `2^levels + 1` equally spaced times on [0, horizon].
pub fn dyadic_grid(horizon: f64, levels: u32) -> Vec<f64> {
    let n = 1usize << levels;
    (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub order: u32,
    pub value: f64,
    pub std_error: f64,
}

/// Mean of `x` with its delete-one jackknife standard error.
pub fn jackknife_mean(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 2 {
        return (x.first().cloned().unwrap_or(0.0), 0.0);
    }
    let total: f64 = x.iter().sum();
    let mean = total / n as f64;
    let nf = n as f64;
    let ss: f64 = x
        .iter()
        .map(|v| {
            let loo = (total - v) / (nf - 1.0);
            (loo - mean) * (loo - mean)
        })
        .sum();
    (mean, ((nf - 1.0) / nf * ss).sqrt())
}

/// Monte Carlo E (X_t - X_s)^m for m in {2, 4}.
pub fn increment_moments(
    ens: &PathEnsemble,
    s_index: usize,
    t_index: usize,
    orders: &[u32],
) -> Result<Vec<MomentEstimate>> {
    let nt = ens.times().len();
    if s_index >= nt || t_index >= nt {
        return Err(Error::InvalidParameter(format!(
            "time index out of range (grid has {nt} points)"
        )));
    }
    let d = ens.increments(s_index, t_index);
    orders
        .iter()
        .map(|&order| {
            if order != 2 && order != 4 {
                return Err(Error::InvalidParameter(format!("moment order {order} not in {{2, 4}}")));
            }
            let p: Vec<f64> = d.iter().map(|x| x.powi(order as i32)).collect();
            let (value, std_error) = jackknife_mean(&p);
            Ok(MomentEstimate {
                order,
                value,
                std_error,
            })
        })
        .collect()
}

/// E d^4 / (E d^2)^2 with a jackknife standard error.
pub fn kurtosis_ratio(d: &[f64]) -> (f64, f64) {
    let n = d.len();
    let nf = n as f64;
    let s2: f64 = d.iter().map(|x| x * x).sum();
    let s4: f64 = d.iter().map(|x| x.powi(4)).sum();
    if n < 2 || s2 == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let ratio = (s4 / nf) / (s2 / nf).powi(2);
    let loo: Vec<f64> = d
        .iter()
        .map(|x| {
            let (a, b) = ((s2 - x * x) / (nf - 1.0), (s4 - x.powi(4)) / (nf - 1.0));
            b / (a * a)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / nf;
    let se = ((nf - 1.0) / nf * loo.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()).sqrt();
    (ratio, se)
}
