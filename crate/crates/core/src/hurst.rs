//! Hurst pairs and time-dependent Hurst profiles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values closer than this to 1/2 or 1 are rejected.
pub const BOUNDARY_MARGIN: f64 = 1e-9;

/// Default number of grid points for the pairwise Hölder scan.
pub const DEFAULT_GRID_POINTS: usize = 1024;

fn in_open_range(h: f64) -> bool {
    h.is_finite() && h > 0.5 + BOUNDARY_MARGIN && h < 1.0 - BOUNDARY_MARGIN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstPair {
    h1: f64,
    h2: f64,
}

impl HurstPair {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        for h in [h1, h2] {
            if !in_open_range(h) {
                return Err(Error::HurstOutOfRange {
                    value: h,
                    margin: BOUNDARY_MARGIN,
                });
            }
        }
        Ok(Self { h1, h2 })
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn h2(&self) -> f64 {
        self.h2
    }

    /// Self-similarity index (h1 + h2) / 2.
    pub fn h(&self) -> f64 {
        0.5 * (self.h1 + self.h2)
    }

    /// Kernel exponents h_i / 2 - 1.
    pub fn exponents(&self) -> (f64, f64) {
        (0.5 * self.h1 - 1.0, 0.5 * self.h2 - 1.0)
    }

    pub fn swapped(&self) -> Self {
        Self {
            h1: self.h2,
            h2: self.h1,
        }
    }
}

/// Shape of a Hurst profile. Each coordinate is `h_i + slope_i t` (affine)
/// or `h_i + amplitude_i sin(2 pi frequency_i t)` (sinusoidal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileShape {
    Constant,
    Affine {
        slope1: f64,
        slope2: f64,
    },
    Sinusoidal {
        amplitude1: f64,
        amplitude2: f64,
        frequency1: f64,
        frequency2: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstProfile {
    #[serde(flatten)]
    pub shape: ProfileShape,
    pub h1: f64,
    pub h2: f64,
    pub horizon: f64,
    pub gamma: f64,
}

/// One coordinate of a profile in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    Constant(f64),
    Affine { base: f64, slope: f64 },
    Sine { base: f64, amp: f64, freq: f64 },
}

impl Coord {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            Coord::Constant(c) => c,
            Coord::Affine { base, slope } => base + slope * t,
            Coord::Sine { base, amp, freq } => base + amp * (2.0 * PI * freq * t).sin(),
        }
    }

    /// (min, argmin, max, argmax) over [0, horizon].
    fn extrema(&self, horizon: f64) -> (f64, f64, f64, f64) {
        let mut cands = vec![0.0, horizon];
        if let Coord::Sine { freq, .. } = *self {
            if freq != 0.0 {
                let period = 1.0 / freq.abs();
                let mut k = 0.0;
                loop {
                    let a = (k + 0.25) * period;
                    if a > horizon {
                        break;
                    }
                    cands.push(a);
                    let b = (k + 0.75) * period;
                    if b <= horizon {
                        cands.push(b);
                    }
                    k += 1.0;
                }
            }
        }
        let (mut lo, mut alo, mut hi, mut ahi) = (f64::INFINITY, 0.0, f64::NEG_INFINITY, 0.0);
        for &t in &cands {
            let v = self.eval(t);
            if v < lo {
                lo = v;
                alo = t;
            }
            if v > hi {
                hi = v;
                ahi = t;
            }
        }
        (lo, alo, hi, ahi)
    }

    /// Analytic Hölder check of |c(t) - c(s)| <= |t - s|^gamma on [0, horizon].
    /// Returns a witness lag `d` when the family bound fails.
    fn holder_margin(&self, gamma: f64, horizon: f64) -> Option<f64> {
        match *self {
            Coord::Constant(_) => None,
            Coord::Affine { slope, .. } => {
                let s = slope.abs();
                if s == 0.0 {
                    return None;
                }
                if gamma <= 1.0 {
                    // d^(gamma-1) is smallest at d = horizon
                    (s > horizon.powf(gamma - 1.0)).then_some(horizon)
                } else {
                    let d = s.powf(1.0 / (gamma - 1.0));
                    Some(0.5 * d.min(horizon))
                }
            }
            Coord::Sine { amp, freq, .. } => {
                let a = amp.abs();
                let f = freq.abs();
                if a == 0.0 || f == 0.0 {
                    return None;
                }
                // |c(t)-c(s)| <= 2a |sin(pi f d)|, and <= 2a once d >= 1/(2f)
                let dmax = horizon.min(0.5 / f);
                let n = 20_000;
                let mut worst = (0.0, 0.0);
                for i in 1..=n {
                    let d = dmax * i as f64 / n as f64;
                    let r = 2.0 * a * (PI * f * d).sin() / d.powf(gamma);
                    if r > worst.0 {
                        worst = (r, d);
                    }
                }
                (worst.0 > 1.0).then_some(worst.1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileExtrema {
    pub min_h1: f64,
    pub max_h1: f64,
    pub min_h2: f64,
    pub max_h2: f64,
    /// (min_h1 + min_h2) / 2
    pub h_lower: f64,
    /// (max_h1 + max_h2) / 2
    pub h_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "lowercase")]
pub enum Violation {
    Range {
        coordinate: u8,
        t: f64,
        value: f64,
    },
    Holder {
        coordinate: u8,
        s: f64,
        t: f64,
        increment: f64,
        bound: f64,
    },
    Gamma {
        gamma: f64,
        h_upper: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Range { coordinate, t, value } => {
                write!(f, "range: H{coordinate}({t}) = {value} is not inside (1/2, 1)")
            }
            Violation::Holder {
                coordinate,
                s,
                t,
                increment,
                bound,
            } => write!(
                f,
                "holder: |H{coordinate}({t}) - H{coordinate}({s})| = {increment:.6e} exceeds |t-s|^gamma = {bound:.6e}"
            ),
            Violation::Gamma { gamma, h_upper } => {
                write!(f, "gamma: gamma = {gamma} must exceed H_upper = {h_upper}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    /// All violations found, ordered range, Hölder, gamma.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

impl HurstProfile {
    pub fn constant(pair: HurstPair, horizon: f64, gamma: f64) -> Self {
        Self {
            shape: ProfileShape::Constant,
            h1: pair.h1(),
            h2: pair.h2(),
            horizon,
            gamma,
        }
    }

    pub fn affine(h1: f64, slope1: f64, h2: f64, slope2: f64, horizon: f64, gamma: f64) -> Self {
        Self {
            shape: ProfileShape::Affine { slope1, slope2 },
            h1,
            h2,
            horizon,
            gamma,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sinusoidal(
        h1: f64,
        amplitude1: f64,
        frequency1: f64,
        h2: f64,
        amplitude2: f64,
        frequency2: f64,
        horizon: f64,
        gamma: f64,
    ) -> Self {
        Self {
            shape: ProfileShape::Sinusoidal {
                amplitude1,
                amplitude2,
                frequency1,
                frequency2,
            },
            h1,
            h2,
            horizon,
            gamma,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self.shape {
            ProfileShape::Constant => true,
            ProfileShape::Affine { slope1, slope2 } => slope1 == 0.0 && slope2 == 0.0,
            ProfileShape::Sinusoidal {
                amplitude1,
                amplitude2,
                frequency1,
                frequency2,
            } => (amplitude1 == 0.0 || frequency1 == 0.0) && (amplitude2 == 0.0 || frequency2 == 0.0),
        }
    }

    fn coords(&self) -> [Coord; 2] {
        match self.shape {
            ProfileShape::Constant => [Coord::Constant(self.h1), Coord::Constant(self.h2)],
            ProfileShape::Affine { slope1, slope2 } => [
                Coord::Affine {
                    base: self.h1,
                    slope: slope1,
                },
                Coord::Affine {
                    base: self.h2,
                    slope: slope2,
                },
            ],
            ProfileShape::Sinusoidal {
                amplitude1,
                amplitude2,
                frequency1,
                frequency2,
            } => [
                Coord::Sine {
                    base: self.h1,
                    amp: amplitude1,
                    freq: frequency1,
                },
                Coord::Sine {
                    base: self.h2,
                    amp: amplitude2,
                    freq: frequency2,
                },
            ],
        }
    }

    /// (H1(t), H2(t)) without range checks.
    pub fn values_at(&self, t: f64) -> (f64, f64) {
        let [c1, c2] = self.coords();
        (c1.eval(t), c2.eval(t))
    }

    pub fn pair_at(&self, t: f64) -> Result<HurstPair> {
        let (a, b) = self.values_at(t);
        HurstPair::new(a, b)
    }

    /// Pair used when the profile is constant.
    pub fn base_pair(&self) -> Result<HurstPair> {
        HurstPair::new(self.h1, self.h2)
    }
}

pub fn profile_extrema(profile: &HurstProfile) -> ProfileExtrema {
    let [c1, c2] = profile.coords();
    let (min_h1, _, max_h1, _) = c1.extrema(profile.horizon);
    let (min_h2, _, max_h2, _) = c2.extrema(profile.horizon);
    ProfileExtrema {
        min_h1,
        max_h1,
        min_h2,
        max_h2,
        h_lower: 0.5 * (min_h1 + min_h2),
        h_upper: 0.5 * (max_h1 + max_h2),
    }
}

/// Checks range, the Hölder hypothesis with constant 1, and gamma > H_upper.
pub fn validate_profile(profile: &HurstProfile, grid_points: usize) -> Result<ValidationReport> {
    if grid_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid_points must be at least 2, got {grid_points}"
        )));
    }
    let horizon = profile.horizon;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let gamma = profile.gamma;
    if !gamma.is_finite() {
        return Err(Error::InvalidParameter("gamma must be finite".into()));
    }
    let coords = profile.coords();
    let mut violations = Vec::new();

    for (i, c) in coords.iter().enumerate() {
        let (lo, alo, hi, ahi) = c.extrema(horizon);
        if !in_open_range(lo) {
            violations.push(Violation::Range {
                coordinate: i as u8 + 1,
                t: alo,
                value: lo,
            });
        } else if !in_open_range(hi) {
            violations.push(Violation::Range {
                coordinate: i as u8 + 1,
                t: ahi,
                value: hi,
            });
        }
    }

    let grid: Vec<f64> = (0..grid_points)
        .map(|k| horizon * k as f64 / (grid_points - 1) as f64)
        .collect();
    for (i, c) in coords.iter().enumerate() {
        let coordinate = i as u8 + 1;
        let vals: Vec<f64> = grid.iter().map(|&t| c.eval(t)).collect();
        let mut found = None;
        'scan: for a in 0..grid_points {
            for b in a + 1..grid_points {
                let d = grid[b] - grid[a];
                let inc = (vals[b] - vals[a]).abs();
                let bound = d.powf(gamma);
                if inc > bound {
                    found = Some(Violation::Holder {
                        coordinate,
                        s: grid[a],
                        t: grid[b],
                        increment: inc,
                        bound,
                    });
                    break 'scan;
                }
            }
        }
        if found.is_none() {
            if let Some(d) = c.holder_margin(gamma, horizon) {
                // the grid missed it; report the family's worst lag from s = 0
                let inc = (c.eval(d) - c.eval(0.0)).abs();
                found = Some(Violation::Holder {
                    coordinate,
                    s: 0.0,
                    t: d,
                    increment: inc,
                    bound: d.powf(gamma),
                });
            }
        }
        violations.extend(found);
    }

    let ext = profile_extrema(profile);
    if gamma <= ext.h_upper {
        violations.push(Violation::Gamma {
            gamma,
            h_upper: ext.h_upper,
        });
    }

    Ok(ValidationReport {
        pass: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn const_profile(h1: f64, h2: f64, gamma: f64) -> HurstProfile {
        HurstProfile {
            shape: ProfileShape::Constant,
            h1,
            h2,
            horizon: 1.0,
            gamma,
        }
    }

    #[test]
    fn pair_rejects_boundary() {
        assert!(HurstPair::new(0.5, 0.7).is_err());
        assert!(HurstPair::new(0.5 + 1e-10, 0.7).is_err());
        assert!(HurstPair::new(0.7, 1.0 - 1e-10).is_err());
        assert!(HurstPair::new(0.6, 0.8).is_ok());
        let p = HurstPair::new(0.6, 0.8).unwrap();
        assert!((p.h() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn constant_profile_passes() {
        let r = validate_profile(&const_profile(0.6, 0.8, 0.99), 1024).unwrap();
        assert!(r.pass, "{:?}", r.violations);
    }

    #[test]
    fn gamma_below_h_upper_fails() {
        let r = validate_profile(&const_profile(0.6, 0.8, 0.65), 1024).unwrap();
        assert!(!r.pass);
        assert!(matches!(r.first_violation(), Some(Violation::Gamma { .. })));
        assert!(r.first_violation().unwrap().to_string().contains("gamma"));
    }

    #[test]
    fn constant_outside_range_is_range_failure() {
        let r = validate_profile(&const_profile(0.45, 0.8, 0.99), 64).unwrap();
        assert!(matches!(
            r.first_violation(),
            Some(Violation::Range { coordinate: 1, .. })
        ));
        assert!(!r.violations.iter().any(|v| matches!(v, Violation::Holder { .. })));
    }

    #[test]
    fn steep_affine_fails_on_range_not_holder() {
        // 0.5 d <= d^0.9 for every d <= 1, so only the range is violated
        let p = HurstProfile::affine(0.55, 0.5, 0.8, 0.0, 1.0, 0.9);
        let r = validate_profile(&p, 1024).unwrap();
        assert!(!r.pass);
        assert!(matches!(
            r.first_violation(),
            Some(Violation::Range { coordinate: 1, .. })
        ));
        assert!(!r.violations.iter().any(|v| matches!(v, Violation::Holder { .. })));
        // brute-force oracle over the grid pairs
        let n = 1024;
        for a in 0..n {
            for b in a + 1..n {
                let d = (b - a) as f64 / (n - 1) as f64;
                assert!(0.5 * d <= d.powf(0.9) + 1e-15);
            }
        }
    }

    #[test]
    fn affine_holder_failure_is_located() {
        let p = HurstProfile::affine(0.55, 0.3, 0.8, 0.0, 1.0, 0.97);
        assert!(validate_profile(&p, 256).unwrap().pass);
        let p = HurstProfile::affine(0.55, 0.3, 0.8, 0.0, 1.0, 0.9);
        let r = validate_profile(&p, 256).unwrap();
        assert!(r.pass);
        // 1.5 d > d^0.9 once d > (2/3)^10
        let p = HurstProfile::affine(0.6, 1.5, 0.8, 0.0, 0.1, 0.9);
        let r = validate_profile(&p, 256).unwrap();
        match r.first_violation() {
            Some(Violation::Holder {
                coordinate,
                s,
                t,
                increment,
                bound,
            }) => {
                assert_eq!(*coordinate, 1);
                assert!(t > s);
                assert!(increment > bound);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sinusoidal_fast_oscillation_fails_holder() {
        // amplitude 0.05 at frequency 20: slope about 6.3, violates at small lags
        let p = HurstProfile::sinusoidal(0.7, 0.05, 20.0, 0.7, 0.0, 0.0, 1.0, 0.9);
        let r = validate_profile(&p, 1024).unwrap();
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Holder { coordinate: 1, .. })));
        let p = HurstProfile::sinusoidal(0.6, 0.05, 1.0, 0.8, 0.0, 0.0, 1.0, 0.9);
        let r = validate_profile(&p, 1024).unwrap();
        assert!(r.pass, "{:?}", r.violations);
    }

    #[test]
    fn grid_points_must_be_at_least_two() {
        assert!(validate_profile(&const_profile(0.6, 0.8, 0.9), 1).is_err());
    }

    #[test]
    fn extrema_examples() {
        let e = profile_extrema(&const_profile(0.6, 0.8, 0.9));
        assert_eq!((e.min_h1, e.max_h1, e.min_h2, e.max_h2), (0.6, 0.6, 0.8, 0.8));
        assert!((e.h_lower - 0.7).abs() < 1e-15 && (e.h_upper - 0.7).abs() < 1e-15);

        let e = profile_extrema(&HurstProfile::affine(0.55, 0.1, 0.8, 0.0, 1.0, 0.9));
        assert!((e.min_h1 - 0.55).abs() < 1e-15);
        assert!((e.max_h1 - 0.65).abs() < 1e-15);
        assert!((e.h_upper - 0.725).abs() < 1e-15);

        let e = profile_extrema(&HurstProfile::sinusoidal(0.6, 0.05, 1.0, 0.8, 0.0, 0.0, 1.0, 0.9));
        assert!((e.max_h1 - 0.65).abs() < 1e-15);
        assert!((e.min_h1 - 0.55).abs() < 1e-15);
    }

    #[test]
    fn profile_serde_roundtrip() {
        let p = HurstProfile::sinusoidal(0.6, 0.05, 1.0, 0.8, 0.01, 2.0, 1.0, 0.9);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"sinusoidal\""));
        let q: HurstProfile = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn extrema_bracket_samples(
            h1 in 0.55f64..0.9, h2 in 0.55f64..0.9,
            a in -0.04f64..0.04, f in 0.1f64..5.0, slope in -0.05f64..0.05,
            horizon in 0.2f64..3.0,
        ) {
            let profiles = [
                HurstProfile::affine(h1, slope, h2, -slope, horizon, 0.95),
                HurstProfile::sinusoidal(h1, a, f, h2, -a, 2.0 * f, horizon, 0.95),
            ];
            for p in profiles {
                let e = profile_extrema(&p);
                for k in 0..=200 {
                    let t = horizon * k as f64 / 200.0;
                    let (x, y) = p.values_at(t);
                    prop_assert!(x >= e.min_h1 - 1e-12 && x <= e.max_h1 + 1e-12);
                    prop_assert!(y >= e.min_h2 - 1e-12 && y <= e.max_h2 + 1e-12);
                }
            }
        }

        #[test]
        fn validation_monotone_in_gamma(
            h1 in 0.55f64..0.8, slope in 0.0f64..0.15, g1 in 0.0f64..1.0, g2 in 0.0f64..1.0,
        ) {
            let p = HurstProfile::affine(h1, slope, 0.75, 0.0, 1.0, 0.99);
            let hu = profile_extrema(&p).h_upper;
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let gamma = hu + (0.999 - hu) * hi;
            let gamma_lo = hu + (gamma - hu) * lo;
            let pass_hi = validate_profile(&HurstProfile { gamma, ..p }, 128).unwrap().pass;
            if pass_hi && gamma_lo > hu {
                let lower = HurstProfile { gamma: gamma_lo, ..p };
                prop_assert!(validate_profile(&lower, 128).unwrap().pass);
            }
        }
    }
}
