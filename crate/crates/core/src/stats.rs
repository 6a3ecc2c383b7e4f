//! Estimators and pass/fail checks: log-log exponent fits, two-sample KS,
//! empirical characteristic functions, and the process-level tests built on
//! them.

use num_complex::Complex64;
use serde::Serialize;

use crate::chaos::double_integral_ensemble;
use crate::domain::TruncatedDomain;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hurst::{HurstPair, HurstProfile};
use crate::kernel::{discretize_kernel, discretize_pair_difference, kernel_l2_norm_sq, DEFAULT_MATRIX_TOL};
use crate::paths::{increment_kernel, jackknife_mean, PathEnsemble, PathSource};
use crate::rng::derive_seed;

/// Acceptance rule for a fitted statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Target {
    Within { value: f64, tolerance: f64 },
    AtLeast { value: f64 },
    AtMost { value: f64 },
}

impl Target {
    pub fn accepts(&self, x: f64) -> bool {
        match *self {
            Target::Within { value, tolerance } => (x - value).abs() <= tolerance,
            Target::AtLeast { value } => x >= value,
            Target::AtMost { value } => x <= value,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Target::Within { value, .. } | Target::AtLeast { value } | Target::AtMost { value } => value,
        }
    }

    pub fn tolerance(&self) -> f64 {
        match *self {
            Target::Within { tolerance, .. } => tolerance,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
}

/// Least squares y = a + b x. With `weights` (inverse variances) the standard
/// errors come from the known variances; without, from the residuals.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::LengthMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 points, got {n}")));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    if x.iter().chain(y).chain(&w).any(|v| !v.is_finite()) || w.iter().any(|&v| v <= 0.0) {
        return Err(Error::DegenerateFit("non-finite data or non-positive weight".into()));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let syy: f64 = y.iter().zip(&w).map(|(c, b)| b * (c - my) * (c - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let scale = if weights.is_some() {
        1.0
    } else if n > 2 {
        rss / (n - 2) as f64
    } else {
        0.0
    };
    let slope_se = (scale / sxx).sqrt();
    let intercept_se = (scale * (1.0 / sw + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
    pub target: Target,
    pub pass: bool,
}

impl FitReport {
    pub fn new(fit: LineFit, target: Target) -> Self {
        Self {
            slope: fit.slope,
            intercept: fit.intercept,
            slope_se: fit.slope_se,
            intercept_se: fit.intercept_se,
            r_squared: fit.r_squared,
            target,
            pass: target.accepts(fit.slope),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(0.5 * alpha).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Two-sample KS distance; passes (same law not rejected) at the 1% level.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("KS needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN in KS sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = ks_critical(n, m, 0.01);
    Ok(KsResult {
        statistic: d,
        critical,
        pass: d < critical,
    })
}

pub fn empirical_cf(samples: &[f64], alpha: f64) -> Complex64 {
    let n = samples.len() as f64;
    let s: Complex64 = samples.iter().map(|x| Complex64::from_polar(1.0, alpha * x)).sum();
    s / n
}

/// `points` equally spaced values on [lo, hi].
pub fn alpha_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

/// sup over `alphas` of |phi_a - phi_b| for two empirical CFs.
pub fn cf_sup_distance(a: &[f64], b: &[f64], alphas: &[f64]) -> f64 {
    alphas
        .iter()
        .map(|&al| (empirical_cf(a, al) - empirical_cf(b, al)).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct LagMoment {
    pub lag: f64,
    pub second_moment: f64,
    pub std_error: f64,
}

fn grid_index(times: &[f64], t: f64) -> Option<usize> {
    let tol = 1e-12 * times.last().map(|x| x.abs()).unwrap_or(1.0).max(1.0);
    times.iter().position(|&s| (s - t).abs() <= tol)
}

/// E (X_{t+h} - X_t)^2 per lag. With an anchor only t = anchor is used;
/// otherwise every grid pair at that lag is averaged within each sample
/// first, so the standard errors stay valid under overlap.
pub fn lag_second_moments(times: &[f64], values: &[f64], lags: &[f64], anchor: Option<f64>) -> Result<Vec<LagMoment>> {
    let nt = times.len();
    if nt == 0 || !values.len().is_multiple_of(nt) {
        return Err(Error::LengthMismatch {
            expected: nt,
            got: values.len(),
        });
    }
    let n = values.len() / nt;
    lags.iter()
        .map(|&h| {
            let pairs: Vec<(usize, usize)> = match anchor {
                Some(a) => {
                    let i = grid_index(times, a)
                        .ok_or_else(|| Error::InvalidParameter(format!("anchor {a} not on the grid")))?;
                    let j = grid_index(times, a + h)
                        .ok_or_else(|| Error::InvalidParameter(format!("anchor {a} + lag {h} not on the grid")))?;
                    vec![(i, j)]
                }
                None => (0..nt)
                    .filter_map(|i| grid_index(times, times[i] + h).map(|j| (i, j)))
                    .collect(),
            };
            if pairs.is_empty() {
                return Err(Error::InvalidParameter(format!("lag {h} does not fit the grid")));
            }
            let per_sample: Vec<f64> = (0..n)
                .map(|s| {
                    let row = &values[s * nt..(s + 1) * nt];
                    pairs.iter().map(|&(i, j)| (row[j] - row[i]).powi(2)).sum::<f64>() / pairs.len() as f64
                })
                .collect();
            let (m2, se) = jackknife_mean(&per_sample);
            Ok(LagMoment {
                lag: h,
                second_moment: m2,
                std_error: se,
            })
        })
        .collect()
}

/// Weighted log-log fit of second moments against lags.
pub fn fit_lag_moments(moments: &[LagMoment], target: Target) -> Result<FitReport> {
    if moments.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 lags, got {}",
            moments.len()
        )));
    }
    if moments.iter().any(|m| !(m.second_moment > 0.0)) {
        return Err(Error::DegenerateFit("zero second moment".into()));
    }
    let x: Vec<f64> = moments.iter().map(|m| m.lag.ln()).collect();
    let y: Vec<f64> = moments.iter().map(|m| m.second_moment.ln()).collect();
    // delta method: var(log m2) = (se / m2)^2
    let w: Vec<f64> = moments
        .iter()
        .map(|m| {
            let r = m.std_error / m.second_moment;
            if r > 0.0 {
                1.0 / (r * r)
            } else {
                1e30
            }
        })
        .collect();
    Ok(FitReport::new(linear_fit(&x, &y, Some(&w))?, target))
}

/// Scaling exponent of increment second moments, with H1 + H2 as target
/// (at the anchor for a varying profile).
pub fn scaling_exponent_fit(
    ens: &PathEnsemble,
    lags: &[f64],
    anchor: Option<f64>,
    tolerance: f64,
) -> Result<FitReport> {
    let value = match ens.source() {
        PathSource::Pair { h1, h2 } => h1 + h2,
        PathSource::Profile(p) => {
            let (a, b) = p.values_at(anchor.unwrap_or(0.0));
            a + b
        }
    };
    let moments = lag_second_moments(ens.times(), ens.values(), lags, anchor)?;
    fit_lag_moments(&moments, Target::Within { value, tolerance })
}

/// Lags 2^-hi .. 2^-lo times `horizon`.
pub fn dyadic_lags(horizon: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).rev().map(|k| horizon * 2f64.powi(-k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuitySlope {
    pub coordinate: u8,
    /// (delta, 2 ||f_{H+delta} - f_H||^2)
    pub distances: Vec<(f64, f64)>,
    pub monotone: bool,
    pub fit: FitReport,
    /// Order (1 or 2) closer to the measured slope.
    pub supported_order: u8,
}

/// Deterministic E (Y - Y')^2 = 2 ||f_{H + delta e_i}(t) - f_H(t)||^2 against
/// delta; hard pass at slope >= 1.
pub fn hurst_continuity_slope(
    base: &HurstPair,
    deltas: &[f64],
    t: f64,
    domain: &TruncatedDomain,
    coordinate: u8,
) -> Result<ContinuitySlope> {
    if deltas.len() < 2 || deltas.iter().any(|&d| !(d > 0.0)) || deltas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::InvalidParameter("deltas must be positive and decreasing".into()));
    }
    let mut distances = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let moved = match coordinate {
            1 => HurstPair::new(base.h1() + d, base.h2())?,
            2 => HurstPair::new(base.h1(), base.h2() + d)?,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "coordinate must be 1 or 2, got {coordinate}"
                )))
            }
        };
        let diff = discretize_pair_difference(&moved, base, t, domain, DEFAULT_MATRIX_TOL)?;
        distances.push((d, 2.0 * kernel_l2_norm_sq(&diff)));
    }
    let monotone = distances.windows(2).all(|p| p[1].1 < p[0].1);
    let x: Vec<f64> = distances.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = distances.iter().map(|p| p.1.ln()).collect();
    let fit = FitReport::new(linear_fit(&x, &y, None)?, Target::AtLeast { value: 1.0 });
    let supported_order = if (fit.slope - 2.0).abs() < (fit.slope - 1.0).abs() {
        2
    } else {
        1
    };
    Ok(ContinuitySlope {
        coordinate,
        distances,
        monotone,
        fit,
        supported_order,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfSimilarity {
    pub c: f64,
    pub exponent: f64,
    pub distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const CF_GRID_POINTS: usize = 41;
pub const CF_GRID_HALF_WIDTH: f64 = 5.0;

/// Compares the laws of Y_{ct} and c^exponent Y_t through empirical CFs on 41
/// points of [-5, 5] in units of the standard deviation of Y_{ct}. The two
/// ensembles use independent streams. The process exponent is `pair.h()`.
#[allow(clippy::too_many_arguments)]
pub fn selfsimilarity_test(
    pair: &HurstPair,
    c: f64,
    t: f64,
    n: usize,
    seed: u64,
    exponent: f64,
    domain: &TruncatedDomain,
    exec: Execution,
) -> Result<SelfSimilarity> {
    if !(c > 0.0) || c * t > domain.horizon() * (1.0 + 1e-12) || !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need c > 0, t > 0 and ct <= horizon (c={c}, t={t})"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let k_ct = discretize_kernel(pair, c * t, domain, DEFAULT_MATRIX_TOL)?;
    let sigma = (2.0 * k_ct.simple_norm_sq()).sqrt();
    let a = double_integral_ensemble(&k_ct, n, derive_seed(seed, 1), exec);
    let b: Vec<f64> = if c == 1.0 {
        double_integral_ensemble(&k_ct, n, derive_seed(seed, 2), exec)
    } else {
        let k_t = discretize_kernel(pair, t, domain, DEFAULT_MATRIX_TOL)?;
        double_integral_ensemble(&k_t, n, derive_seed(seed, 2), exec)
    };
    let scale = c.powf(exponent);
    let a: Vec<f64> = a.iter().map(|x| x / sigma).collect();
    let b: Vec<f64> = b.iter().map(|x| scale * x / sigma).collect();
    let alphas = alpha_grid(-CF_GRID_HALF_WIDTH, CF_GRID_HALF_WIDTH, CF_GRID_POINTS);
    let distance = cf_sup_distance(&a, &b, &alphas);
    let threshold = 4.0 / (n as f64).sqrt();
    Ok(SelfSimilarity {
        c,
        exponent,
        distance,
        threshold,
        pass: distance < threshold,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderEstimate {
    pub estimate: f64,
    pub scales: usize,
}

/// Slope of log max |X(t + d) - X(t)| against log d over the dyadic scales
/// of a grid with 2^K + 1 equally spaced points.
pub fn holder_exponent_estimate(times: &[f64], path: &[f64]) -> Result<HolderEstimate> {
    if times.len() != path.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: path.len(),
        });
    }
    let steps = times.len().saturating_sub(1);
    if steps == 0 || !steps.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "need 2^K + 1 grid points, got {}",
            times.len()
        )));
    }
    let k = steps.trailing_zeros() as usize;
    if k < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 dyadic scales, got {k}")));
    }
    let dt = (times[steps] - times[0]) / steps as f64;
    if times.windows(2).any(|p| ((p[1] - p[0]) - dt).abs() > 1e-9 * dt) {
        return Err(Error::InvalidParameter("grid is not equally spaced".into()));
    }
    let mut x = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    for level in 1..=k {
        let stride = steps >> level;
        let max = (0..(1usize << level))
            .map(|j| (path[(j + 1) * stride] - path[j * stride]).abs())
            .fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::DegenerateFit(format!("flat path at scale 2^-{level}")));
        }
        x.push((stride as f64 * dt).ln());
        y.push(max.ln());
    }
    let fit = linear_fit(&x, &y, None)?;
    Ok(HolderEstimate {
        estimate: fit.slope,
        scales: k,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityTest {
    pub t1: f64,
    pub t2: f64,
    pub h: f64,
    pub ks: KsResult,
}

/// Two-sample KS between X_{t1+h} - X_{t1} and X_{t2+h} - X_{t2}, each drawn
/// directly from its increment kernel. The stream family is keyed by the
/// start time, so t1 = t2 reproduces the same ensemble.
#[allow(clippy::too_many_arguments)]
pub fn stationary_increments_test(
    profile: &HurstProfile,
    h: f64,
    t1: f64,
    t2: f64,
    n: usize,
    seed: u64,
    domain: &TruncatedDomain,
    exec: Execution,
) -> Result<StationarityTest> {
    if !(h > 0.0) || t1 < 0.0 || t2 < 0.0 || t1.max(t2) + h > domain.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "need h > 0 and t + h <= horizon (t1={t1}, t2={t2}, h={h})"
        )));
    }
    let draw = |t: f64| -> Result<Vec<f64>> {
        let inc = increment_kernel(profile, t, t + h, domain, DEFAULT_MATRIX_TOL)?;
        Ok(double_integral_ensemble(
            &inc.g,
            n,
            derive_seed(seed, t.to_bits()),
            exec,
        ))
    };
    let a = draw(t1)?;
    let b = draw(t2)?;
    Ok(StationarityTest {
        t1,
        t2,
        h,
        ks: ks_two_sample(&a, &b)?,
    })
}
