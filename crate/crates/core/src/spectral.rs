//! Eigenvalues of the discretized kernel operator and the exact law of the
//! double integral they determine.
//!
//! With noise refined into r sub-cells, the simple function being integrated
//! lives on M r sub-cells and has a zero sub-cell diagonal. Its operator splits
//! into block-constant vectors, where it acts as
//!
//!   G = W^{1/2} F W^{1/2} - diag(F_jj w_j) / r,
//!
//! and vectors summing to zero inside a cell, each with eigenvalue
//! -F_jj w_j / r (multiplicity r - 1).

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hurst::HurstPair;
use crate::kernel::{discretize_kernel, KernelMatrix, DEFAULT_MATRIX_TOL};
use crate::quad;
use crate::rng::StreamSeed;

pub const DEFAULT_RANK_CAP: usize = 256;
pub const DEFAULT_RELATIVE_CUTOFF: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct EigenSpectrum {
    /// Ordered by decreasing absolute value.
    pub lambdas: Vec<f64>,
    pub truncation_rank: usize,
    /// Squared mass of the discarded eigenvalues.
    pub residual_mass: f64,
    /// Squared L2 norm of the operator (retained plus residual).
    pub total_mass: f64,
    pub label: String,
}

impl EigenSpectrum {
    /// A spectrum given directly; sorted by absolute value, nothing discarded.
    pub fn from_eigenvalues(mut lambdas: Vec<f64>, label: impl Into<String>) -> Self {
        sort_by_magnitude(&mut lambdas);
        let total_mass = lambdas.iter().map(|l| l * l).sum();
        Self {
            truncation_rank: lambdas.len(),
            lambdas,
            residual_mass: 0.0,
            total_mass,
            label: label.into(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.lambdas.iter().map(|l| l * l).sum()
    }

    /// Variance of the retained-spectrum law, 2 sum lambda^2.
    pub fn variance(&self) -> f64 {
        2.0 * self.sum_sq()
    }

    /// Keeps the first `rank` eigenvalues, moving the rest into the residual.
    pub fn truncated(&self, rank: usize) -> Self {
        let rank = rank.min(self.lambdas.len());
        let dropped: f64 = self.lambdas[rank..].iter().map(|l| l * l).sum();
        Self {
            lambdas: self.lambdas[..rank].to_vec(),
            truncation_rank: rank,
            residual_mass: self.residual_mass + dropped,
            total_mass: self.total_mass,
            label: self.label.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W, meta: &str) -> Result<()> {
        writeln!(out, "# spectrum: {}", self.label)?;
        writeln!(
            out,
            "# rank={} residual_mass={:?} total_mass={:?}",
            self.truncation_rank, self.residual_mass, self.total_mass
        )?;
        if !meta.is_empty() {
            writeln!(out, "# {meta}")?;
        }
        writeln!(out, "index,lambda")?;
        for (i, l) in self.lambdas.iter().enumerate() {
            writeln!(out, "{},{l:?}", i + 1)?;
        }
        Ok(())
    }
}

fn sort_by_magnitude(v: &mut [f64]) {
    v.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));
}

/// Every eigenvalue of the simple-function operator, sorted by magnitude.
pub fn operator_eigenvalues(km: &KernelMatrix) -> Result<Vec<f64>> {
    let m = km.cells();
    let r = km.domain().refinement() as f64;
    let w = km.weights();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let v = km.values();
    let mut g = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            g[(j, k)] = v[j * m + k] * sw[j] * sw[k];
        }
        g[(j, j)] -= v[j * m + j] * w[j] / r;
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenSolver("non-finite matrix entries".into()));
    }
    let eig = SymmetricEigen::try_new(g, f64::EPSILON, 100 * m.max(10))
        .ok_or_else(|| Error::EigenSolver(format!("no convergence for a {m} x {m} matrix")))?;
    let mut out: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let rr = km.domain().refinement();
    if rr > 1 {
        for j in 0..m {
            let l = -v[j * m + j] * w[j] / r;
            out.extend(std::iter::repeat_n(l, rr - 1));
        }
    }
    sort_by_magnitude(&mut out);
    Ok(out)
}

/// Nyström spectrum. `rank = None` keeps eigenvalues above 1e-6 |lambda_1|,
/// at most 256; `Some(k)` keeps the top k.
pub fn eigen_decompose(km: &KernelMatrix, rank: Option<usize>) -> Result<EigenSpectrum> {
    let all = operator_eigenvalues(km)?;
    let total_mass = km.simple_norm_sq();
    let keep = match rank {
        Some(k) => k.min(all.len()),
        None => {
            let top = all.first().map(|l| l.abs()).unwrap_or(0.0);
            all.iter()
                .take(DEFAULT_RANK_CAP)
                .take_while(|l| l.abs() > DEFAULT_RELATIVE_CUTOFF * top)
                .count()
        }
    };
    let lambdas = all[..keep].to_vec();
    let kept: f64 = lambdas.iter().map(|l| l * l).sum();
    Ok(EigenSpectrum {
        truncation_rank: keep,
        residual_mass: (total_mass - kept).max(0.0),
        total_mass,
        lambdas,
        label: km.label().to_string(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CfValue {
    pub value: Complex64,
    /// Bound on |full CF - retained CF| from the residual mass.
    pub tail_bound: f64,
}

/// log of E exp(i alpha lambda (zeta^2 - 1)) = -i alpha lambda - Log(1 - 2 i alpha lambda) / 2.
fn log_factor(x: f64) -> Complex64 {
    Complex64::new(0.0, -x) - 0.5 * Complex64::new(1.0, -2.0 * x).ln()
}

pub fn char_function(spec: &EigenSpectrum, alpha: f64) -> CfValue {
    let s: Complex64 = spec.lambdas.iter().map(|l| log_factor(alpha * l)).sum();
    let value = s.exp();
    // |log factor(x)| <= x^2, so the residual CF is within z e^z of 1, z = alpha^2 R
    let z = alpha * alpha * spec.residual_mass;
    let tail_bound = value.norm() * (z * z.exp()).min(2.0);
    CfValue { value, tail_bound }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulusBound {
    /// (prod (1 + 4 alpha^2 lambda^2))^{-1/4}
    pub exact: f64,
    /// (1 + 4 a^2 e1 + 16 a^4 e2 + 64 a^6 e3)^{-1/4}, e_k elementary symmetric in lambda^2.
    pub three_term: f64,
}

/// e1, e2, e3 of the squared eigenvalues by the additive recurrence
/// (no cancellation, unlike Newton's identities).
pub fn elementary_symmetric_sq(lambdas: &[f64]) -> [f64; 3] {
    let mut e = [0.0f64; 3];
    for l in lambdas {
        let x = l * l;
        e[2] += x * e[1];
        e[1] += x * e[0];
        e[0] += x;
    }
    e
}

pub fn char_modulus_bound(spec: &EigenSpectrum, alpha: f64) -> ModulusBound {
    let a2 = alpha * alpha;
    let log_sum: f64 = spec.lambdas.iter().map(|l| (4.0 * a2 * l * l).ln_1p()).sum();
    let [e1, e2, e3] = elementary_symmetric_sq(&spec.lambdas);
    let poly = 1.0 + 4.0 * a2 * e1 + 16.0 * a2 * a2 * e2 + 64.0 * a2 * a2 * a2 * e3;
    ModulusBound {
        exact: (-0.25 * log_sum).exp(),
        three_term: poly.powf(-0.25),
    }
}

/// Samples sum_k lambda_k (zeta_k^2 - 1); sample i uses stream i.
pub fn spectral_sample(spec: &EigenSpectrum, n: usize, seed: u64, exec: Execution) -> Vec<f64> {
    exec.map(n, |i| {
        let mut rng = StreamSeed::new(seed, i as u64).rng();
        spec.lambdas
            .iter()
            .map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                l * (z * z - 1.0)
            })
            .sum()
    })
}

/// kappa_m = 2^{m-1} (m-1)! sum lambda^m, for 2 <= m <= 8.
pub fn cumulants(spec: &EigenSpectrum, m: u32) -> Result<f64> {
    if !(2..=8).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "cumulant order must be in 2..=8, got {m}"
        )));
    }
    let fact: f64 = (1..m).map(|k| k as f64).product();
    let pm: f64 = spec.lambdas.iter().map(|l| l.powi(m as i32)).sum();
    Ok(2f64.powi(m as i32 - 1) * fact * pm)
}

/// E[I^m] / (E[I^2])^{m/2} from the moment–cumulant recursion, m in {4, 6}.
pub fn moment_bound_ratio(spec: &EigenSpectrum, m: u32) -> Result<f64> {
    if m != 4 && m != 6 {
        return Err(Error::InvalidParameter(format!("moment order must be 4 or 6, got {m}")));
    }
    let n = m as usize;
    let mut kappa = vec![0.0; n + 1];
    for (k, slot) in kappa.iter_mut().enumerate().skip(2) {
        *slot = cumulants(spec, k as u32)?;
    }
    let mut mom = vec![0.0; n + 1];
    mom[0] = 1.0;
    for j in 1..=n {
        let mut acc = 0.0;
        for k in 1..=j {
            acc += binomial(j - 1, k - 1) * kappa[k] * mom[j - k];
        }
        mom[j] = acc;
    }
    if mom[2] <= 0.0 {
        return Err(Error::DegenerateFit("zero variance spectrum".into()));
    }
    Ok(mom[n] / mom[2].powf(m as f64 / 2.0))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GammaCheck {
    pub a: f64,
    pub h: f64,
    pub s: f64,
    pub quadrature: f64,
    pub closed_form: f64,
    pub rel_error: f64,
}

/// int_{-inf}^s (s - y)^{h/2 - 1} e^{a y} dy against a^{-h/2} Gamma(h/2) e^{a s}.
pub fn c_ah_identity(a: f64, h: f64, s: f64) -> Result<GammaCheck> {
    if !(a > 0.0 && h > 0.0) {
        return Err(Error::InvalidParameter("need a > 0 and h > 0".into()));
    }
    // u = s - y = v^p with p h / 2 = 2 leaves a smooth integrand in v
    let p = 4.0 / h;
    let f = |v: f64| p * v * (-a * v.powf(p)).exp();
    let r = quad::integrate_to_infinity(f, 0.0, 1e-12, 0.0, 10_000)?;
    let quadrature = r.value * (a * s).exp();
    let closed_form = a.powf(-h / 2.0) * statrs::function::gamma::gamma(h / 2.0) * (a * s).exp();
    Ok(GammaCheck {
        a,
        h,
        s,
        quadrature,
        closed_form,
        rel_error: ((quadrature - closed_form) / closed_form).abs(),
    })
}

pub const WITNESS_RATES: [f64; 3] = [1.0, 2.0, 4.0];
pub const GRAM_TOLERANCE: f64 = 1e-6;
pub const GAMMA_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyReport {
    pub threshold: f64,
    pub k_positive: usize,
    pub leading: Vec<f64>,
    pub gram_min_eigenvalue: f64,
    pub gamma_checks: Vec<GammaCheck>,
    pub enough_eigenvalues: bool,
    pub gram_independent: bool,
    pub gamma_identity: bool,
}

impl NondegeneracyReport {
    pub fn pass(&self) -> bool {
        self.enough_eigenvalues && self.gram_independent && self.gamma_identity
    }
}

/// Exact cell averages of e^{a x} 1{x <= 1}.
fn exp_witness(edges: &[f64], a: f64) -> Vec<f64> {
    edges
        .windows(2)
        .map(|c| {
            let (l, r) = (c[0], c[1].min(1.0));
            if r <= l {
                0.0
            } else {
                ((a * r).exp() - (a * l).exp()) / (a * (c[1] - c[0]))
            }
        })
        .collect()
}

/// Counts eigenvalues above `threshold` lambda_1, checks that the operator maps
/// the exponential witnesses to linearly independent images, and verifies the
/// c_{a,h} identity at a few points.
pub fn nondegeneracy_check_matrix(km: &KernelMatrix, threshold: f64) -> Result<NondegeneracyReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let eig = operator_eigenvalues(km)?;
    let top = eig.first().map(|l| l.abs()).unwrap_or(0.0);
    let k_positive = eig.iter().filter(|&&l| l > threshold * top).count();

    let m = km.cells();
    let w = km.weights();
    let v = km.values();
    let images: Vec<Vec<f64>> = WITNESS_RATES
        .iter()
        .map(|&a| {
            let f = exp_witness(km.domain().edges(), a);
            (0..m)
                .map(|j| (0..m).map(|k| v[j * m + k] * f[k] * w[k]).sum())
                .collect()
        })
        .collect();
    let n = images.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            gram[(a, b)] = (0..m).map(|j| images[a][j] * images[b][j] * w[j]).sum();
        }
    }
    let d: Vec<f64> = (0..n).map(|a| gram[(a, a)].sqrt()).collect();
    let gram_min_eigenvalue = if d.contains(&0.0) {
        0.0
    } else {
        for a in 0..n {
            for b in 0..n {
                gram[(a, b)] /= d[a] * d[b];
            }
        }
        let e = SymmetricEigen::try_new(gram, f64::EPSILON, 1000)
            .ok_or_else(|| Error::EigenSolver("Gram matrix".into()))?;
        e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0)
    };

    let mut gamma_checks = Vec::new();
    for &(a, h, s) in &[(1.0, 0.6, 0.0), (2.0, 0.8, 0.5), (4.0, 0.7, -1.0), (1.0, 0.9, 1.0)] {
        gamma_checks.push(c_ah_identity(a, h, s)?);
    }
    Ok(NondegeneracyReport {
        threshold,
        k_positive,
        leading: eig.iter().take(5).cloned().collect(),
        gram_min_eigenvalue,
        enough_eigenvalues: k_positive >= 3,
        gram_independent: gram_min_eigenvalue > GRAM_TOLERANCE,
        gamma_identity: gamma_checks.iter().all(|g| g.rel_error < GAMMA_TOLERANCE),
        gamma_checks,
    })
}

pub fn nondegeneracy_check(
    pair: &HurstPair,
    t: f64,
    domain: &crate::domain::TruncatedDomain,
    threshold: f64,
) -> Result<NondegeneracyReport> {
    let km = discretize_kernel(pair, t, domain, DEFAULT_MATRIX_TOL)?;
    nondegeneracy_check_matrix(&km, threshold)
}

/// CF trace rows: alpha, Re, Im, modulus, three-term bound.
pub fn write_cf_csv<W: Write>(mut out: W, spec: &EigenSpectrum, alphas: &[f64], meta: &str) -> Result<()> {
    writeln!(out, "# characteristic function: {}", spec.label)?;
    if !meta.is_empty() {
        writeln!(out, "# {meta}")?;
    }
    writeln!(out, "alpha,re,im,modulus,three_term_bound,tail_bound")?;
    for &a in alphas {
        let cf = char_function(spec, a);
        let mb = char_modulus_bound(spec, a);
        writeln!(
            out,
            "{a:?},{:?},{:?},{:?},{:?},{:?}",
            cf.value.re, cf.value.im, mb.exact, mb.three_term, cf.tail_bound
        )?;
    }
    Ok(())
}
