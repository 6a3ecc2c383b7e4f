//! The two-exponent Rosenblatt kernel, its time integral, and cell-averaged
//! matrices on a truncated grid.
//!
//! Cell averages are exact in x and y: for a cell [l, r] of width w,
//!
//!   P_j(s) = ((s - l)_+^{a+1} - (s - r)_+^{a+1}) / ((a + 1) w)
//!
//! is the average of (s - x)_+^a over the cell, so the averaged time integral
//! is F = int_0^t (P1 P2^T + P2 P1^T) ds. The s-integral runs over panels split
//! at every cell edge, with Gauss–Legendre nodes clustered at each panel's
//! left end (where the power singularities sit).

use std::io::Write;

use serde::Serialize;

use crate::domain::TruncatedDomain;
use crate::error::{Error, Result};
use crate::hurst::HurstPair;
use crate::linalg::gemm;
use crate::quad;

pub const DEFAULT_NODES: usize = 8;
const MAX_NODES: usize = 32;
/// Node clustering exponent: s = a + h u^p.
const CLUSTER_POWER: i32 = 4;
pub const DEFAULT_POINTWISE_TOL: f64 = 1e-6;
pub const DEFAULT_MATRIX_TOL: f64 = 1e-3;
/// choose_truncation gives up beyond this multiple of t.
pub const TRUNCATION_BUDGET: f64 = 65536.0;

/// K(s, x, y). Infinite when one factor vanishes and the other is positive.
pub fn kernel_k(pair: &HurstPair, s: f64, x: f64, y: f64) -> f64 {
    let (a1, a2) = pair.exponents();
    let u = s - x;
    let v = s - y;
    if u < 0.0 || v < 0.0 {
        return 0.0;
    }
    if u == 0.0 || v == 0.0 {
        return f64::INFINITY;
    }
    u.powf(a1) * v.powf(a2) + u.powf(a2) * v.powf(a1)
}

/// f(t, x, y) = int_0^t K(s, x, y) ds by adaptive quadrature.
///
/// The integrand starts at m = max(x, y, 0); with s = m + u^8 the power
/// singularity there becomes a bounded, smooth-enough integrand in u.
pub fn time_integrated_kernel(pair: &HurstPair, t: f64, x: f64, y: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("time must be positive, got {t}")));
    }
    let m = x.max(y).max(0.0);
    if m >= t {
        return Ok(0.0);
    }
    if x == y && x >= 0.0 {
        return Ok(f64::INFINITY);
    }
    const P: i32 = 8;
    let (a1, a2) = pair.exponents();
    let g = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        // offsets from m first: forming m + d then subtracting loses d
        let d = u.powi(P);
        let (p, q) = ((m - x) + d, (m - y) + d);
        if p <= 0.0 || q <= 0.0 {
            return 0.0;
        }
        let k = p.powf(a1) * q.powf(a2) + p.powf(a2) * q.powf(a1);
        k * P as f64 * u.powi(P - 1)
    };
    let upper = (t - m).powf(1.0 / P as f64);
    let r = quad::integrate(g, 0.0, upper, tol * 0.1, 0.0, 20_000)?;
    Ok(r.value)
}

/// Quadrature nodes for s in [0, breaks.last()].
#[derive(Debug, Clone)]
pub(crate) struct SNodes {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    /// Number of nodes at or below each break point (same length as `breaks`).
    pub count_at: Vec<usize>,
    pub breaks: Vec<f64>,
}

/// 0, the cell edges inside (0, max(times)), and every positive time.
pub(crate) fn break_points(edges: &[f64], times: &[f64]) -> Vec<f64> {
    break_points_from(edges, 0.0, times)
}

/// `start`, the cell edges inside (start, max(times)), and every time above start.
pub(crate) fn break_points_from(edges: &[f64], start: f64, times: &[f64]) -> Vec<f64> {
    let tmax = times.iter().cloned().fold(start, f64::max);
    let mut b: Vec<f64> = edges.iter().cloned().filter(|&e| e > start && e < tmax).collect();
    b.extend(times.iter().cloned().filter(|&t| t > start));
    b.push(start);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

pub(crate) fn s_nodes(breaks: &[f64], n: usize) -> SNodes {
    let (u, wu) = quad::gauss_legendre(n);
    let mut s = Vec::with_capacity(n * breaks.len());
    let mut w = Vec::with_capacity(n * breaks.len());
    let mut count_at = vec![0usize];
    let p = CLUSTER_POWER as f64;
    for pair in breaks.windows(2) {
        let (a, h) = (pair[0], pair[1] - pair[0]);
        for (ui, wi) in u.iter().zip(&wu) {
            s.push(a + h * ui.powi(CLUSTER_POWER));
            w.push(h * p * ui.powi(CLUSTER_POWER - 1) * wi);
        }
        count_at.push(s.len());
    }
    SNodes {
        s,
        w,
        count_at,
        breaks: breaks.to_vec(),
    }
}

impl SNodes {
    pub fn count_below(&self, t: f64) -> usize {
        match self.breaks.binary_search_by(|b| b.total_cmp(&t)) {
            Ok(i) => self.count_at[i],
            Err(_) => panic!("time {t} is not a break point"),
        }
    }
}

/// Cell averages of (s - x)_+^a: an M x Q row-major matrix.
pub(crate) fn cell_average_matrix(edges: &[f64], s: &[f64], a: f64) -> Vec<f64> {
    let m = edges.len() - 1;
    let q = s.len();
    let b = a + 1.0;
    let mut out = vec![0.0; m * q];
    let mut pw = vec![0.0; m + 1];
    for (k, &sk) in s.iter().enumerate() {
        for (i, &e) in edges.iter().enumerate() {
            let d = sk - e;
            pw[i] = if d > 0.0 { d.powf(b) } else { 0.0 };
        }
        for j in 0..m {
            out[j * q + k] = (pw[j] - pw[j + 1]) / (b * (edges[j + 1] - edges[j]));
        }
    }
    out
}

/// F = sum_q w_q (P1_q P2_q^T + P2_q P1_q^T) over the first `q` nodes.
pub(crate) fn assemble(p1: &[f64], p2: &[f64], weights: &[f64], m: usize, qtot: usize, q: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * q];
    for j in 0..m {
        for k in 0..q {
            a[j * q + k] = p1[j * qtot + k] * weights[k];
        }
    }
    let mut c = vec![0.0; m * m];
    // C = A (m x q) * P2^T (q x m); P2 is m x qtot row-major
    gemm(
        m,
        q,
        m,
        1.0,
        &a,
        q as isize,
        1,
        p2,
        1,
        qtot as isize,
        0.0,
        &mut c,
        m as isize,
        1,
    );
    let mut f = vec![0.0; m * m];
    for j in 0..m {
        for k in 0..m {
            f[j * m + k] = c[j * m + k] + c[k * m + j];
        }
    }
    f
}

fn assemble_pair(pair: &HurstPair, edges: &[f64], nodes: &SNodes, q: usize) -> Vec<f64> {
    let (a1, a2) = pair.exponents();
    let s = &nodes.s[..q];
    let p1 = cell_average_matrix(edges, s, a1);
    let p2 = cell_average_matrix(edges, s, a2);
    assemble(&p1, &p2, &nodes.w[..q], edges.len() - 1, q, q)
}

/// Rows j of F computed from the nodes directly, O(M Q) each.
fn probe_rows(pair: &HurstPair, edges: &[f64], nodes: &SNodes, rows: &[usize]) -> Vec<Vec<f64>> {
    let m = edges.len() - 1;
    let q = nodes.s.len();
    let (a1, a2) = pair.exponents();
    let p1 = cell_average_matrix(edges, &nodes.s, a1);
    let p2 = cell_average_matrix(edges, &nodes.s, a2);
    rows.iter()
        .map(|&j| {
            (0..m)
                .map(|k| {
                    let mut v = 0.0;
                    for r in 0..q {
                        v += nodes.w[r] * (p1[j * q + r] * p2[k * q + r] + p2[j * q + r] * p1[k * q + r]);
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// Relative weighted L2 change of a few probe rows between n and 2n nodes.
fn probe_error(pair: &HurstPair, domain: &TruncatedDomain, breaks: &[f64], n: usize) -> f64 {
    let edges = domain.edges();
    let widths = domain.widths();
    let m = widths.len();
    let (lo, hi) = (breaks[0], *breaks.last().unwrap());
    let first = edges.iter().position(|&e| e >= lo).unwrap_or(0).min(m - 1);
    let last = edges.iter().rposition(|&e| e < hi).unwrap_or(m - 1).min(m - 1);
    let mut rows = vec![0, first, last, (first + last) / 2];
    rows.sort();
    rows.dedup();
    let coarse = probe_rows(pair, edges, &s_nodes(breaks, n), &rows);
    let fine = probe_rows(pair, edges, &s_nodes(breaks, 2 * n), &rows);
    let mut worst: f64 = 0.0;
    for (c, f) in coarse.iter().zip(&fine) {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..m {
            let d = f[k] - c[k];
            num += d * d * widths[k];
            den += f[k] * f[k] * widths[k];
        }
        if den > 0.0 {
            worst = worst.max((num / den).sqrt());
        }
    }
    worst
}

/// Smallest node count per panel (8, 16 or 32) meeting `tol` on the probe rows.
pub(crate) fn nodes_needed(pair: &HurstPair, domain: &TruncatedDomain, breaks: &[f64], tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut n = DEFAULT_NODES;
    loop {
        let err = probe_error(pair, domain, breaks, n);
        if err <= tol {
            return Ok(n);
        }
        if 2 * n > MAX_NODES {
            return Err(Error::Quadrature(format!(
                "kernel matrix probe error {err:.3e} above {tol:.1e} with {n} nodes per panel"
            )));
        }
        n *= 2;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelMatrix {
    domain: TruncatedDomain,
    t: f64,
    values: Vec<f64>,
    label: String,
}

impl KernelMatrix {
    /// Wraps explicit symmetric values (row-major M x M).
    pub fn from_values(domain: &TruncatedDomain, t: f64, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let m = domain.cells();
        if values.len() != m * m {
            return Err(Error::LengthMismatch {
                expected: m * m,
                got: values.len(),
            });
        }
        for j in 0..m {
            for k in 0..m {
                let v = values[j * m + k];
                if !v.is_finite() {
                    return Err(Error::NonFiniteKernel { row: j, col: k });
                }
                if k > j && v != values[k * m + j] {
                    return Err(Error::InvalidParameter(format!("values not symmetric at ({j}, {k})")));
                }
            }
        }
        Ok(Self {
            domain: domain.clone(),
            t,
            values,
            label: label.into(),
        })
    }

    pub fn zeros(domain: &TruncatedDomain, t: f64) -> Self {
        let m = domain.cells();
        Self {
            domain: domain.clone(),
            t,
            values: vec![0.0; m * m],
            label: "zero".into(),
        }
    }

    pub fn domain(&self) -> &TruncatedDomain {
        &self.domain
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn cells(&self) -> usize {
        self.domain.cells()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn weights(&self) -> &[f64] {
        self.domain.widths()
    }
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.cells() + k]
    }
    pub fn diagonal(&self) -> Vec<f64> {
        let m = self.cells();
        (0..m).map(|j| self.values[j * m + j]).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            domain: self.domain.clone(),
            t: self.t,
            values: self.values.iter().map(|v| v * c).collect(),
            label: format!("{} * {c}", self.label),
        }
    }

    /// Entrywise self - other on a shared domain.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        check_same_domain(self, other)?;
        Ok(Self {
            domain: self.domain.clone(),
            t: self.t,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            label: format!("({}) - ({})", self.label, other.label),
        })
    }

    /// Entrywise a self + b other.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_same_domain(self, other)?;
        Ok(Self {
            domain: self.domain.clone(),
            t: self.t,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            label: format!("{a}({}) + {b}({})", self.label, other.label),
        })
    }

    /// L2 norm of the simple function actually integrated: the full norm minus
    /// the sub-cell diagonal blocks.
    pub fn simple_norm_sq(&self) -> f64 {
        let r = self.domain.refinement() as f64;
        let w = self.weights();
        let diag: f64 = self.diagonal().iter().zip(w).map(|(f, w)| (f * w) * (f * w)).sum();
        kernel_l2_norm_sq(self) - diag / r
    }

    pub fn write_csv<W: Write>(&self, mut out: W, meta: &str) -> Result<()> {
        let d = &self.domain;
        writeln!(out, "# kernel: {}", self.label)?;
        writeln!(
            out,
            "# t={:?} cells={} left_cut={:?} horizon={:?} grading={:?} refinement={}",
            self.t,
            d.cells(),
            d.left_cut(),
            d.horizon(),
            d.grading(),
            d.refinement()
        )?;
        if !meta.is_empty() {
            writeln!(out, "# {meta}")?;
        }
        writeln!(out, "row,col,x_left,x_right,y_left,y_right,value")?;
        let e = d.edges();
        let m = d.cells();
        for j in 0..m {
            for k in 0..m {
                writeln!(
                    out,
                    "{j},{k},{:?},{:?},{:?},{:?},{:?}",
                    e[j],
                    e[j + 1],
                    e[k],
                    e[k + 1],
                    self.values[j * m + k]
                )?;
            }
        }
        Ok(())
    }

    /// Little-endian dump: b"RKM1", cells (u64), refinement (u64), t, edges, values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"RKM1")?;
        out.write_all(&(self.cells() as u64).to_le_bytes())?;
        out.write_all(&(self.domain.refinement() as u64).to_le_bytes())?;
        out.write_all(&self.t.to_le_bytes())?;
        for e in self.domain.edges() {
            out.write_all(&e.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Io("malformed kernel dump".into());
        if bytes.len() < 28 || &bytes[..4] != b"RKM1" {
            return Err(bad());
        }
        let u = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let m = u(4) as usize;
        let r = u(12) as usize;
        let t = f(20);
        let need = 28 + 8 * (m + 1) + 8 * m * m;
        if bytes.len() != need {
            return Err(bad());
        }
        let edges: Vec<f64> = (0..=m).map(|i| f(28 + 8 * i)).collect();
        let off = 28 + 8 * (m + 1);
        let values: Vec<f64> = (0..m * m).map(|i| f(off + 8 * i)).collect();
        let horizon = *edges.last().unwrap();
        let domain = TruncatedDomain::from_edges(edges, horizon, crate::domain::Grading::Graded, r)?;
        Self::from_values(&domain, t, values, "binary dump")
    }
}

fn check_same_domain(a: &KernelMatrix, b: &KernelMatrix) -> Result<()> {
    if a.domain.edges() != b.domain.edges() || a.domain.refinement() != b.domain.refinement() {
        return Err(Error::DomainMismatch("kernels live on different grids".into()));
    }
    Ok(())
}

fn check_time(t: f64, domain: &TruncatedDomain) -> Result<()> {
    if !(t >= 0.0) || t > domain.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "time {t} outside [0, {}]",
            domain.horizon()
        )));
    }
    Ok(())
}

fn finite_matrix(domain: &TruncatedDomain, t: f64, values: Vec<f64>, label: String) -> Result<KernelMatrix> {
    let m = domain.cells();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteKernel { row: i / m, col: i % m });
    }
    Ok(KernelMatrix {
        domain: domain.clone(),
        t,
        values,
        label,
    })
}

/// Cell-averaged f(t, ., .) for a constant pair.
///
/// `tol` bounds the relative change of probe rows when the number of nodes per
/// panel doubles; nodes are doubled up to 32 before giving up.
pub fn discretize_kernel(pair: &HurstPair, t: f64, domain: &TruncatedDomain, tol: f64) -> Result<KernelMatrix> {
    discretize_increment(pair, 0.0, t, domain, tol)
}

/// Cell-averaged f(t) - f(s) = int_s^t K ds, integrated over [s, t] only so
/// short increments keep their relative accuracy.
pub fn discretize_increment(
    pair: &HurstPair,
    s: f64,
    t: f64,
    domain: &TruncatedDomain,
    tol: f64,
) -> Result<KernelMatrix> {
    check_time(s, domain)?;
    check_time(t, domain)?;
    if s > t {
        return Err(Error::InvalidParameter(format!(
            "increment needs s <= t, got {s} > {t}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let label = if s == 0.0 {
        format!("rosenblatt h1={} h2={} t={t}", pair.h1(), pair.h2())
    } else {
        format!("rosenblatt h1={} h2={} increment {s}..{t}", pair.h1(), pair.h2())
    };
    if s == t {
        let mut z = KernelMatrix::zeros(domain, t);
        z.label = label;
        return Ok(z);
    }
    let breaks = break_points_from(domain.edges(), s, &[t]);
    let n = nodes_needed(pair, domain, &breaks, tol)?;
    let nodes = s_nodes(&breaks, n);
    let values = assemble_pair(pair, domain.edges(), &nodes, nodes.s.len());
    finite_matrix(domain, t, values, label)
}

/// f_a(t) - f_b(t) for two pairs on one shared node set, so the difference is
/// smooth in the exponents rather than dominated by quadrature noise.
pub fn discretize_pair_difference(
    a: &HurstPair,
    b: &HurstPair,
    t: f64,
    domain: &TruncatedDomain,
    tol: f64,
) -> Result<KernelMatrix> {
    check_time(t, domain)?;
    let label = format!("difference ({}, {}) - ({}, {}) t={t}", a.h1(), a.h2(), b.h1(), b.h2());
    if t == 0.0 {
        let mut z = KernelMatrix::zeros(domain, 0.0);
        z.label = label;
        return Ok(z);
    }
    let breaks = break_points(domain.edges(), &[t]);
    let n = nodes_needed(a, domain, &breaks, tol)?.max(nodes_needed(b, domain, &breaks, tol)?);
    let nodes = s_nodes(&breaks, n);
    let q = nodes.s.len();
    let fa = assemble_pair(a, domain.edges(), &nodes, q);
    let fb = assemble_pair(b, domain.edges(), &nodes, q);
    let values = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
    finite_matrix(domain, t, values, label)
}

/// f(t) for `pair` using the first nodes of a shared set; `t` must be a break.
pub(crate) fn discretize_on_nodes(
    pair: &HurstPair,
    t: f64,
    domain: &TruncatedDomain,
    nodes: &SNodes,
) -> Result<KernelMatrix> {
    let q = nodes.count_below(t);
    let values = assemble_pair(pair, domain.edges(), nodes, q);
    finite_matrix(
        domain,
        t,
        values,
        format!("rosenblatt h1={} h2={} t={t}", pair.h1(), pair.h2()),
    )
}

/// Sum_{j,k} values^2 w_j w_k.
pub fn kernel_l2_norm_sq(km: &KernelMatrix) -> f64 {
    let m = km.cells();
    let w = km.weights();
    let mut total = 0.0;
    for j in 0..m {
        let row = &km.values[j * m..(j + 1) * m];
        let s: f64 = row.iter().zip(w).map(|(v, wk)| v * v * wk).sum();
        total += s * w[j];
    }
    total
}

pub fn kernel_l2_distance_sq(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    check_same_domain(a, b)?;
    if a.t != b.t {
        return Err(Error::DomainMismatch(format!(
            "kernels at different times {} and {}",
            a.t, b.t
        )));
    }
    Ok(kernel_l2_norm_sq(&a.difference(b)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationStep {
    pub left_cut: f64,
    pub tail_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub left_cut: f64,
    pub steps: Vec<TruncationStep>,
}

/// Fraction of the discrete mass of f(t) on [-2L, T]^2 lying where either
/// coordinate is in [-2L, -L].
pub fn tail_ratio(pair: &HurstPair, t: f64, left_cut: f64, cells: usize, horizon: f64) -> Result<f64> {
    let base = TruncatedDomain::graded(left_cut, horizon, cells, 1)?;
    let ext = base.extended_to(2.0 * left_cut)?;
    let km = discretize_kernel(pair, t, &ext, DEFAULT_MATRIX_TOL)?;
    let tail = ext.cells() - base.cells();
    let m = ext.cells();
    let w = ext.widths();
    let (mut in_tail, mut total) = (0.0, 0.0);
    for j in 0..m {
        for k in 0..m {
            let v = km.values[j * m + k];
            let c = v * v * w[j] * w[k];
            total += c;
            if j < tail || k < tail {
                in_tail += c;
            }
        }
    }
    Ok(in_tail / total)
}

/// Smallest L in t, 2t, 4t, ... whose tail ratio is below `tol`.
pub fn choose_truncation(pair: &HurstPair, t: f64, tol: f64) -> Result<TruncationReport> {
    choose_truncation_with(pair, t, tol, 512)
}

pub fn choose_truncation_with(pair: &HurstPair, t: f64, tol: f64, cells: usize) -> Result<TruncationReport> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must lie in (0, 1), got {tol}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("time must be positive, got {t}")));
    }
    let mut steps = Vec::new();
    let mut l = t;
    loop {
        let ratio = tail_ratio(pair, t, l, cells, t)?;
        steps.push(TruncationStep {
            left_cut: l,
            tail_ratio: ratio,
        });
        if ratio < tol {
            return Ok(TruncationReport { left_cut: l, steps });
        }
        if l >= TRUNCATION_BUDGET * t {
            return Err(Error::TruncationBudget {
                left_cut: l,
                ratio,
                tol,
            });
        }
        l *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Grading;
    use proptest::prelude::*;

    fn pair(a: f64, b: f64) -> HurstPair {
        HurstPair::new(a, b).unwrap()
    }

    #[test]
    fn kernel_k_examples() {
        let p = pair(0.6, 0.8);
        assert_eq!(kernel_k(&p, 1.0, 1.5, 0.0), 0.0);
        let v = kernel_k(&p, 1.0, 0.5, 0.0);
        let expect = 2f64.powf(0.7) + 2f64.powf(0.6);
        assert!((v - expect).abs() < 1e-14);
        // quoted to five digits as 3.14025; the exact value is 3.140221
        assert!((v - 3.14025).abs() < 5e-5);
        assert!(kernel_k(&p, 1.0, 1.0, 0.5).is_infinite());
    }

    #[test]
    fn equal_exponents_reduce_to_doubled_product() {
        let p = pair(0.7, 0.7);
        let (s, x, y): (f64, f64, f64) = (2.0, 0.3, -1.2);
        let a = 0.35 - 1.0;
        let expect = 2.0 * (s - x).powf(a) * (s - y).powf(a);
        assert_eq!(kernel_k(&p, s, x, y), expect);
    }

    #[test]
    fn pointwise_integral_brute_force_oracle() {
        // 2 int_0^1 (s+1)^-0.7 s^-0.7 ds with s = v^(10/3): integrand
        // 2 (10/3) (v^(10/3)+1)^-0.7 on [0,1], midpoint rule with 1e6 points
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let v = (i as f64 + 0.5) * h;
            acc += (v.powf(10.0 / 3.0) + 1.0).powf(-0.7);
        }
        let oracle = 2.0 * (10.0 / 3.0) * acc * h;
        let got = time_integrated_kernel(&pair(0.6, 0.6), 1.0, -1.0, 0.0, 1e-9).unwrap();
        assert!((got - oracle).abs() < 1e-6 * oracle, "got {got} oracle {oracle}");
    }

    #[test]
    fn pointwise_special_cases() {
        let p = pair(0.6, 0.8);
        assert!(time_integrated_kernel(&p, 1.0, 0.5, 0.5, 1e-6).unwrap().is_infinite());
        assert_eq!(time_integrated_kernel(&p, 1.0, 1.0, -3.0, 1e-6).unwrap(), 0.0);
        assert_eq!(time_integrated_kernel(&p, 1.0, 2.0, 0.2, 1e-6).unwrap(), 0.0);
        // lower Riemann sums of the diagonal integrand grow without bound
        let a = p.h() - 2.0;
        let sums: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&eps: &f64| ((0.5f64).powf(a + 1.0) - eps.powf(a + 1.0)) / (a + 1.0) * 2.0)
            .collect();
        assert!(sums.windows(2).all(|w| w[1] > 2.0 * w[0]));
    }

    #[test]
    fn cell_average_matches_quadrature() {
        // average over [l, r] of (s - x)_+^a by brute force
        let edges = [-2.0, -0.5, 0.25, 0.75];
        let s = [0.1, 0.5, 0.9];
        let a = -0.65;
        let p = cell_average_matrix(&edges, &s, a);
        for (k, &sk) in s.iter().enumerate() {
            for j in 0..3 {
                let (l, r) = (edges[j], edges[j + 1]);
                let hi = r.min(sk);
                let brute = if hi <= l {
                    0.0
                } else {
                    // x = hi - v^4 keeps the integrand finite at x = s
                    let g = |v: f64| 4.0 * v.powi(3) * (sk - hi + v.powi(4)).powf(a);
                    quad::integrate(g, 0.0, (hi - l).powf(0.25), 1e-12, 0.0, 10_000)
                        .unwrap()
                        .value
                        / (r - l)
                };
                assert!((p[j * 3 + k] - brute).abs() < 1e-9 * (1.0 + brute), "j={j} k={k}");
            }
        }
    }

    #[test]
    fn matrix_is_exactly_symmetric_and_nonnegative() {
        let d = TruncatedDomain::graded(64.0, 1.0, 96, 4).unwrap();
        let km = discretize_kernel(&pair(0.6, 0.8), 0.7, &d, DEFAULT_MATRIX_TOL).unwrap();
        let m = km.cells();
        for j in 0..m {
            for k in 0..m {
                assert_eq!(km.get(j, k), km.get(k, j));
                assert!(km.get(j, k) >= 0.0);
            }
        }
        // zero time gives the zero kernel
        let z = discretize_kernel(&pair(0.6, 0.8), 0.0, &d, DEFAULT_MATRIX_TOL).unwrap();
        assert_eq!(kernel_l2_norm_sq(&z), 0.0);
    }

    #[test]
    fn entries_match_pointwise_integral_for_separated_cells() {
        // a far cell pair: average of f over the cells vs pointwise f at many points
        let d = TruncatedDomain::uniform(4.0, 1.0, 10, 1).unwrap();
        let p = pair(0.65, 0.85);
        let km = discretize_kernel(&p, 1.0, &d, 1e-6).unwrap();
        let e = d.edges();
        let (j, k) = (1usize, 6usize);
        let n = 24;
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let x = e[j] + (e[j + 1] - e[j]) * (a as f64 + 0.5) / n as f64;
                let y = e[k] + (e[k + 1] - e[k]) * (b as f64 + 0.5) / n as f64;
                acc += time_integrated_kernel(&p, 1.0, x, y, 1e-9).unwrap();
            }
        }
        let brute = acc / (n * n) as f64;
        assert!(
            (km.get(j, k) - brute).abs() < 2e-3 * brute,
            "{} vs {brute}",
            km.get(j, k)
        );
    }

    #[test]
    fn norm_converges_under_refinement() {
        // L = 10 as in the self-convergence example; full norm
        let p = pair(0.6, 0.8);
        let norms: Vec<f64> = [128, 256, 512]
            .iter()
            .map(|&m| {
                let d = TruncatedDomain::graded(10.0, 1.0, m, 8).unwrap();
                kernel_l2_norm_sq(&discretize_kernel(&p, 1.0, &d, DEFAULT_MATRIX_TOL).unwrap())
            })
            .collect();
        let d1 = (norms[1] - norms[0]).abs();
        let d2 = (norms[2] - norms[1]).abs();
        assert!(d2 < d1, "{norms:?}");
        assert!(d2 < 0.02 * norms[2], "{norms:?}");
    }

    #[test]
    fn homogeneity_and_distance() {
        let d = TruncatedDomain::graded(16.0, 1.0, 64, 2).unwrap();
        let a = discretize_kernel(&pair(0.6, 0.8), 1.0, &d, DEFAULT_MATRIX_TOL).unwrap();
        let b = discretize_kernel(&pair(0.62, 0.8), 1.0, &d, DEFAULT_MATRIX_TOL).unwrap();
        let c = discretize_kernel(&pair(0.66, 0.8), 1.0, &d, DEFAULT_MATRIX_TOL).unwrap();
        let n = kernel_l2_norm_sq(&a);
        assert!((kernel_l2_norm_sq(&a.scaled(3.0)) - 9.0 * n).abs() < 1e-12 * n);
        assert_eq!(kernel_l2_distance_sq(&a, &a).unwrap(), 0.0);
        let ab = kernel_l2_distance_sq(&a, &b).unwrap().sqrt();
        let bc = kernel_l2_distance_sq(&b, &c).unwrap().sqrt();
        let ac = kernel_l2_distance_sq(&a, &c).unwrap().sqrt();
        assert!(ac <= ab + bc + 1e-12);
        let other = TruncatedDomain::graded(16.0, 1.0, 65, 2).unwrap();
        let z = KernelMatrix::zeros(&other, 1.0);
        assert!(matches!(kernel_l2_distance_sq(&a, &z), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn translation_consistency() {
        // F(c + t) - F(c) on a grid shifted by c equals F(t) on the base grid
        let p = pair(0.7, 0.8);
        let c = 0.25;
        let base = TruncatedDomain::uniform(3.0, 1.0, 32, 1).unwrap();
        let shifted = TruncatedDomain::from_edges(
            base.edges().iter().map(|e| e + c).collect(),
            1.0 + c,
            Grading::Uniform,
            1,
        )
        .unwrap();
        let f = discretize_kernel(&p, 0.5, &base, 1e-6).unwrap();
        let g1 = discretize_kernel(&p, 0.5 + c, &shifted, 1e-6).unwrap();
        let g0 = discretize_kernel(&p, c, &shifted, 1e-6).unwrap();
        let g = g1.difference(&g0).unwrap();
        let diff: f64 = f.values().iter().zip(g.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f64 = f.values().iter().map(|a| a * a).sum();
        assert!((diff / norm).sqrt() < 1e-9, "{}", (diff / norm).sqrt());
    }

    #[test]
    fn csv_and_binary_export_roundtrip() {
        let d = TruncatedDomain::graded(8.0, 1.0, 12, 2).unwrap();
        let km = discretize_kernel(&pair(0.6, 0.8), 1.0, &d, DEFAULT_MATRIX_TOL).unwrap();
        let mut buf = Vec::new();
        km.write_binary(&mut buf).unwrap();
        let back = KernelMatrix::read_binary(&buf).unwrap();
        assert_eq!(back.values(), km.values());
        assert_eq!(back.domain().edges(), km.domain().edges());
        let mut csv = Vec::new();
        km.write_csv(&mut csv, "seed=1").unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# kernel:"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 144);
        assert_eq!(d.grading(), Grading::Graded);
    }

    #[test]
    fn loose_truncation_tolerance_accepts_small_cut() {
        let p = pair(0.6, 0.8);
        let r = choose_truncation_with(&p, 1.0, 0.5, 128).unwrap();
        assert!(r.left_cut <= 4.0, "{r:?}");
        let tighter = choose_truncation_with(&p, 1.0, 0.1, 128).unwrap();
        assert!(tighter.left_cut >= r.left_cut);
        assert!(choose_truncation_with(&p, 1.0, 1.5, 128).is_err());
    }

    #[test]
    fn increment_matches_difference_of_endpoints() {
        let d = TruncatedDomain::graded(256.0, 1.0, 128, 4).unwrap();
        let p = pair(0.6, 0.8);
        let inc = discretize_increment(&p, 0.3, 0.7, &d, 1e-6).unwrap();
        let a = discretize_kernel(&p, 0.7, &d, 1e-6).unwrap();
        let b = discretize_kernel(&p, 0.3, &d, 1e-6).unwrap();
        let diff = a.difference(&b).unwrap();
        let err = kernel_l2_norm_sq(&inc.difference(&diff).unwrap()).sqrt();
        assert!(err < 1e-5 * kernel_l2_norm_sq(&inc).sqrt(), "{err}");
        assert_eq!(
            kernel_l2_norm_sq(&discretize_increment(&p, 0.4, 0.4, &d, 1e-3).unwrap()),
            0.0
        );
        assert!(discretize_increment(&p, 0.5, 0.4, &d, 1e-3).is_err());
    }

    #[test]
    fn pair_difference_is_smooth_in_the_exponent() {
        // halving the perturbation at least halves the distance
        let d = TruncatedDomain::graded(256.0, 1.0, 128, 4).unwrap();
        let base = pair(0.6, 0.8);
        let dist: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let km = discretize_pair_difference(&pair(0.6 + h, 0.8), &base, 1.0, &d, 1e-3).unwrap();
                kernel_l2_norm_sq(&km)
            })
            .collect();
        assert!(dist.windows(2).all(|w| w[1] < 0.5 * w[0]), "{dist:?}");
        let same = discretize_pair_difference(&base, &base, 1.0, &d, 1e-3).unwrap();
        assert_eq!(kernel_l2_norm_sq(&same), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernel_symmetries(
            h1 in 0.51f64..0.99, h2 in 0.51f64..0.99,
            s in -2.0f64..3.0, x in -5.0f64..3.0, y in -5.0f64..3.0,
        ) {
            let p = pair(h1, h2);
            let k = kernel_k(&p, s, x, y);
            prop_assert_eq!(k, kernel_k(&p, s, y, x));
            let ks = kernel_k(&p.swapped(), s, x, y);
            prop_assert!((k - ks).abs() <= 1e-12 * k.abs().max(1.0));
            prop_assert!(k >= 0.0);
        }

        #[test]
        fn pointwise_scaling(h1 in 0.55f64..0.95, h2 in 0.55f64..0.95, x in -3.0f64..0.9, y in -3.0f64..0.9, c in 0.3f64..3.0) {
            prop_assume!((x - y).abs() > 1e-2);
            let p = pair(h1, h2);
            let f = time_integrated_kernel(&p, 1.0, x, y, 1e-10).unwrap();
            let g = time_integrated_kernel(&p, c, c * x, c * y, 1e-10).unwrap();
            let expect = c.powf(p.h() - 1.0) * f;
            prop_assert!((g - expect).abs() <= 1e-7 * expect.max(1e-300), "{} vs {}", g, expect);
        }
    }
}
