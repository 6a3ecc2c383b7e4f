//! Truncated spatial grids on [-L, T].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width ratio between neighbouring outer cells of a graded grid.
pub const GRADING_RATIO: f64 = 0.9;
pub const DEFAULT_REFINEMENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    Uniform,
    Graded,
}

/// Cell partition of [-left_cut, horizon].
///
/// `refinement` splits every cell into that many equal noise sub-cells; the
/// diagonal exclusion of the double integral acts on the sub-cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDomain {
    left_cut: f64,
    horizon: f64,
    grading: Grading,
    refinement: usize,
    edges: Vec<f64>,
    #[serde(skip)]
    widths: Vec<f64>,
}

impl TruncatedDomain {
    pub fn new(left_cut: f64, horizon: f64, cells: usize, grading: Grading, refinement: usize) -> Result<Self> {
        if !(left_cut.is_finite() && left_cut > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "left cut must be positive, got {left_cut}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 cells, got {cells}")));
        }
        let edges = match grading {
            Grading::Uniform => (0..=cells)
                .map(|k| {
                    if k == cells {
                        horizon
                    } else {
                        -left_cut + (left_cut + horizon) * k as f64 / cells as f64
                    }
                })
                .collect(),
            Grading::Graded => graded_edges(left_cut, horizon, cells)?,
        };
        Self::from_edges(edges, horizon, grading, refinement)
    }

    pub fn uniform(left_cut: f64, horizon: f64, cells: usize, refinement: usize) -> Result<Self> {
        Self::new(left_cut, horizon, cells, Grading::Uniform, refinement)
    }

    pub fn graded(left_cut: f64, horizon: f64, cells: usize, refinement: usize) -> Result<Self> {
        Self::new(left_cut, horizon, cells, Grading::Graded, refinement)
    }

    /// Builds a domain from explicit edges; the last edge must be `horizon`.
    pub fn from_edges(edges: Vec<f64>, horizon: f64, grading: Grading, refinement: usize) -> Result<Self> {
        if refinement == 0 {
            return Err(Error::InvalidParameter("refinement factor must be positive".into()));
        }
        if edges.len() < 3 {
            return Err(Error::InvalidParameter("need at least 2 cells".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter(
                "cell edges must be finite and strictly increasing".into(),
            ));
        }
        if *edges.last().unwrap() != horizon || edges[0] >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "edges must cover [-L, {horizon}] with L > 0"
            )));
        }
        let mut d = Self {
            left_cut: -edges[0],
            horizon,
            grading,
            refinement,
            edges,
            widths: Vec::new(),
        };
        d.fill_widths();
        Ok(d)
    }

    fn fill_widths(&mut self) {
        self.widths = self.edges.windows(2).map(|p| p[1] - p[0]).collect();
    }

    /// Restores derived data after deserialization.
    pub fn rebuild(mut self) -> Self {
        self.fill_widths();
        self
    }

    pub fn left_cut(&self) -> f64 {
        self.left_cut
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn grading(&self) -> Grading {
        self.grading
    }
    pub fn refinement(&self) -> usize {
        self.refinement
    }
    pub fn cells(&self) -> usize {
        self.widths.len()
    }
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Number of cells inside [0, horizon].
    pub fn inner_cells(&self) -> usize {
        self.edges.iter().filter(|&&e| e >= 0.0).count().saturating_sub(1)
    }

    pub fn with_refinement(&self, refinement: usize) -> Result<Self> {
        Self::from_edges(self.edges.clone(), self.horizon, self.grading, refinement)
    }

    /// Same domain with geometric cells appended to the left until `new_left_cut`.
    /// The edge at the old left cut is kept.
    pub fn extended_to(&self, new_left_cut: f64) -> Result<Self> {
        if new_left_cut <= self.left_cut {
            return Err(Error::InvalidParameter("extension must increase the left cut".into()));
        }
        let w0 = self.widths[0];
        let ext = geometric_cover(w0, new_left_cut - self.left_cut)?;
        let mut edges = Vec::with_capacity(ext.len() + self.edges.len());
        let mut x = -self.left_cut;
        let mut left = Vec::with_capacity(ext.len());
        for w in &ext {
            x -= w;
            left.push(x);
        }
        *left.last_mut().unwrap() = -new_left_cut;
        edges.extend(left.iter().rev());
        edges.extend_from_slice(&self.edges);
        Self::from_edges(edges, self.horizon, self.grading, self.refinement)
    }
}

/// Widths w0 r, w0 r^2, ..., w0 r^n summing to `length` with r in [1, 1/0.9],
/// using the fewest cells.
fn geometric_cover(w0: f64, length: f64) -> Result<Vec<f64>> {
    let rmax = 1.0 / GRADING_RATIO;
    for n in 1..100_000usize {
        let at_max = sum_geometric(w0, rmax, n);
        if at_max < length {
            continue;
        }
        if w0 * n as f64 > length {
            return Err(Error::InvalidParameter(format!(
                "cannot cover length {length} with cells no narrower than {w0}"
            )));
        }
        let r = solve_ratio(w0, n, length);
        return Ok((1..=n).map(|i| w0 * r.powi(i as i32)).collect());
    }
    Err(Error::InvalidParameter("geometric cover needs too many cells".into()))
}

fn sum_geometric(w: f64, r: f64, n: usize) -> f64 {
    if (r - 1.0).abs() < 1e-14 {
        w * n as f64
    } else {
        w * r * (r.powi(n as i32) - 1.0) / (r - 1.0)
    }
}

fn solve_ratio(w: f64, n: usize, length: f64) -> f64 {
    let (mut lo, mut hi) = (1.0, 1.0 / GRADING_RATIO);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if sum_geometric(w, m, n) > length {
            hi = m;
        } else {
            lo = m;
        }
    }
    0.5 * (lo + hi)
}

/// Uniform cells on [0, horizon]; to the left, widths grow geometrically with
/// ratio at most 1/0.9 until -left_cut is reached exactly.
fn graded_edges(left_cut: f64, horizon: f64, cells: usize) -> Result<Vec<f64>> {
    let rmax = 1.0 / GRADING_RATIO;
    for inner in (1..cells).rev() {
        let w = horizon / inner as f64;
        let outer = cells - inner;
        if sum_geometric(w, rmax, outer) < left_cut {
            continue;
        }
        if w * outer as f64 > left_cut {
            return Err(Error::InvalidParameter(format!(
                "left cut {left_cut} too short for a graded grid of {cells} cells; use a uniform grid"
            )));
        }
        let r = solve_ratio(w, outer, left_cut);
        let mut left = Vec::with_capacity(outer);
        let mut x = 0.0;
        for i in 1..=outer {
            x -= w * r.powi(i as i32);
            left.push(x);
        }
        *left.last_mut().unwrap() = -left_cut;
        let mut edges: Vec<f64> = left.into_iter().rev().collect();
        edges.extend((0..=inner).map(|k| {
            if k == inner {
                horizon
            } else {
                horizon * k as f64 / inner as f64
            }
        }));
        return Ok(edges);
    }
    Err(Error::InvalidParameter(format!(
        "{cells} cells cannot reach left cut {left_cut} with growth ratio 1/{GRADING_RATIO}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_invariants(d: &TruncatedDomain) {
        let e = d.edges();
        assert_eq!(e[0], -d.left_cut());
        assert_eq!(*e.last().unwrap(), d.horizon());
        assert!(e.windows(2).all(|p| p[1] > p[0]));
        assert_eq!(d.widths().len(), d.cells());
        if d.grading() == Grading::Graded {
            let w = d.widths();
            let first_inner = e.iter().position(|&x| x >= 0.0).unwrap();
            // non-increasing toward [0, T]
            for j in 1..first_inner {
                assert!(w[j] <= w[j - 1] * (1.0 + 1e-9), "j={j}");
            }
        }
    }

    #[test]
    fn graded_inner_counts_are_pinned() {
        for (l, inner) in [(16.0, 449), (256.0, 423), (65536.0, 372), (2f64.powi(30), 282)] {
            let d = TruncatedDomain::graded(l, 1.0, 512, 8).unwrap();
            check_invariants(&d);
            assert_eq!(d.inner_cells(), inner, "L={l}");
            assert_eq!(d.cells(), 512);
        }
        let d = TruncatedDomain::graded(2f64.powi(30), 1.0, 1024, 8).unwrap();
        assert_eq!(d.inner_cells(), 785);
    }

    #[test]
    fn graded_rejects_tiny_left_cut() {
        assert!(TruncatedDomain::graded(1e-4, 1.0, 64, 1).is_err());
        assert!(TruncatedDomain::uniform(1e-4, 1.0, 64, 1).is_ok());
    }

    #[test]
    fn extension_keeps_old_edges() {
        let d = TruncatedDomain::graded(100.0, 1.0, 128, 4).unwrap();
        let e = d.extended_to(200.0).unwrap();
        check_invariants(&e);
        assert!(e.edges().contains(&-100.0));
        assert_eq!(e.left_cut(), 200.0);
        assert_eq!(&e.edges()[e.cells() - d.cells()..], d.edges());
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(TruncatedDomain::from_edges(vec![-1.0, 0.5, 0.5, 1.0], 1.0, Grading::Uniform, 1).is_err());
        assert!(TruncatedDomain::from_edges(vec![-1.0, 0.0, 1.0], 1.0, Grading::Uniform, 0).is_err());
        assert!(TruncatedDomain::from_edges(vec![-1.0, 0.0, 0.9], 1.0, Grading::Uniform, 1).is_err());
    }

    proptest! {
        #[test]
        fn domains_cover_exactly(l in 1.0f64..1e7, m in 16usize..600, graded in any::<bool>()) {
            let g = if graded { Grading::Graded } else { Grading::Uniform };
            if let Ok(d) = TruncatedDomain::new(l, 1.0, m, g, 2) {
                check_invariants(&d);
                prop_assert_eq!(d.cells(), m);
                let total: f64 = d.widths().iter().sum();
                prop_assert!((total - (l + 1.0)).abs() <= 1e-9 * (l + 1.0));
            } else {
                prop_assert!(graded);
            }
        }
    }
}
