//! Single and double Wiener integrals of simple functions on a truncated grid.
//!
//! Noise is drawn on `refinement` equal sub-cells per cell. A cell increment is
//! the sum of its sub-increments, and the double integral of a cell-constant
//! kernel excludes the sub-cell diagonal:
//!
//!   I2(F) = sum_{j,k} F_jk dW_j dW_k - sum_j F_jj S_j,
//!
//! where S_j is the sum of squared sub-increments of cell j. With one sub-cell
//! this is the plain off-diagonal sum.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::TruncatedDomain;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::KernelMatrix;
use crate::linalg::gemm;
use crate::rng::StreamSeed;

/// Samples per GEMM block in ensemble evaluation. Fixed so results do not
/// depend on the thread count.
pub(crate) const BLOCK: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct WhiteNoiseGrid {
    domain: TruncatedDomain,
    increments: Vec<f64>,
    sub_squares: Vec<f64>,
    seed: Option<StreamSeed>,
}

impl WhiteNoiseGrid {
    /// Noise with the given cell increments, each carried by a single sub-cell.
    pub fn from_increments(domain: &TruncatedDomain, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != domain.cells() {
            return Err(Error::LengthMismatch {
                expected: domain.cells(),
                got: increments.len(),
            });
        }
        let sub_squares = increments.iter().map(|x| x * x).collect();
        Ok(Self {
            domain: domain.clone(),
            increments,
            sub_squares,
            seed: None,
        })
    }

    pub fn domain(&self) -> &TruncatedDomain {
        &self.domain
    }
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
    /// Per-cell sums of squared sub-increments.
    pub fn sub_squares(&self) -> &[f64] {
        &self.sub_squares
    }
    pub fn seed(&self) -> Option<StreamSeed> {
        self.seed
    }
}

fn fill_noise<R: Rng>(rng: &mut R, widths: &[f64], r: usize, dw: &mut [f64], s: &mut [f64]) {
    for (j, w) in widths.iter().enumerate() {
        let sd = (w / r as f64).sqrt();
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..r {
            let z: f64 = rng.sample(StandardNormal);
            let d = sd * z;
            sum += d;
            sq += d * d;
        }
        dw[j] = sum;
        s[j] = sq;
    }
}

pub fn sample_white_noise(domain: &TruncatedDomain, seed: StreamSeed) -> WhiteNoiseGrid {
    let m = domain.cells();
    let mut increments = vec![0.0; m];
    let mut sub_squares = vec![0.0; m];
    fill_noise(
        &mut seed.rng(),
        domain.widths(),
        domain.refinement(),
        &mut increments,
        &mut sub_squares,
    );
    WhiteNoiseGrid {
        domain: domain.clone(),
        increments,
        sub_squares,
        seed: Some(seed),
    }
}

/// Noise for samples `first..first+count`, row-major (count x M); sample i
/// uses stream i, so rows equal `sample_white_noise(domain, (seed, i))`.
#[derive(Debug, Clone)]
pub(crate) struct NoiseBatch {
    pub dw: Vec<f64>,
    pub s: Vec<f64>,
}

pub(crate) fn sample_noise_batch(domain: &TruncatedDomain, seed: u64, first: usize, count: usize) -> NoiseBatch {
    let m = domain.cells();
    let mut dw = vec![0.0; count * m];
    let mut s = vec![0.0; count * m];
    for i in 0..count {
        let mut rng = StreamSeed::new(seed, (first + i) as u64).rng();
        fill_noise(
            &mut rng,
            domain.widths(),
            domain.refinement(),
            &mut dw[i * m..(i + 1) * m],
            &mut s[i * m..(i + 1) * m],
        );
    }
    NoiseBatch { dw, s }
}

/// I1(a) = sum_j a_j dW_j.
pub fn single_integral(coeffs: &[f64], noise: &WhiteNoiseGrid) -> Result<f64> {
    if coeffs.len() != noise.increments.len() {
        return Err(Error::LengthMismatch {
            expected: noise.increments.len(),
            got: coeffs.len(),
        });
    }
    Ok(coeffs.iter().zip(&noise.increments).map(|(a, x)| a * x).sum())
}

/// Quadratic form with the sub-cell diagonal removed. O(M^2).
pub fn double_integral(km: &KernelMatrix, noise: &WhiteNoiseGrid) -> Result<f64> {
    if km.domain().edges() != noise.domain.edges() || km.domain().refinement() != noise.domain.refinement() {
        return Err(Error::DomainMismatch("kernel and noise live on different grids".into()));
    }
    let m = km.cells();
    let v = km.values();
    let x = &noise.increments;
    let mut total = 0.0;
    for j in 0..m {
        let row = &v[j * m..(j + 1) * m];
        let inner: f64 = row.iter().zip(x).map(|(f, y)| f * y).sum();
        total += x[j] * inner - row[j] * noise.sub_squares[j];
    }
    Ok(total)
}

/// Quadratic forms for a block of noise rows via one GEMM; `dw` and `s` hold
/// `out.len()` rows of length m.
pub(crate) fn quadratic_forms(values: &[f64], m: usize, dw: &[f64], s: &[f64], out: &mut [f64]) {
    let c = out.len();
    let mut b = vec![0.0; c * m];
    gemm(
        c, m, m, 1.0, dw, m as isize, 1, values, m as isize, 1, 0.0, &mut b, m as isize, 1,
    );
    for i in 0..c {
        let x = &dw[i * m..(i + 1) * m];
        let s = &s[i * m..(i + 1) * m];
        let bi = &b[i * m..(i + 1) * m];
        let mut acc = 0.0;
        for j in 0..m {
            acc += bi[j] * x[j] - values[j * m + j] * s[j];
        }
        out[i] = acc;
    }
}

/// `n` independent double integrals of one kernel; sample i uses stream i.
pub fn double_integral_ensemble(km: &KernelMatrix, n: usize, seed: u64, exec: Execution) -> Vec<f64> {
    let m = km.cells();
    let mut out = vec![0.0; n];
    exec.for_each_chunk(&mut out, BLOCK, |ci, chunk| {
        let batch = sample_noise_batch(km.domain(), seed, ci * BLOCK, chunk.len());
        quadratic_forms(km.values(), m, &batch.dw, &batch.s, chunk);
    });
    out
}

/// (a(x) b(y) + a(y) b(x)) / 2 with the diagonal set to zero.
pub fn symmetric_tensor(domain: &TruncatedDomain, a: &[f64], b: &[f64]) -> Result<KernelMatrix> {
    let m = domain.cells();
    for v in [a, b] {
        if v.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: v.len(),
            });
        }
    }
    let mut values = vec![0.0; m * m];
    for j in 0..m {
        for k in j + 1..m {
            let v = 0.5 * (a[j] * b[k] + a[k] * b[j]);
            values[j * m + k] = v;
            values[k * m + j] = v;
        }
    }
    KernelMatrix::from_values(domain, domain.horizon(), values, "symmetric tensor")
}

/// Single-column CSV with `#` metadata lines.
pub fn write_ensemble_csv<W: Write>(mut out: W, samples: &[f64], meta: &[(&str, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "value")?;
    for x in samples {
        writeln!(out, "{x:?}")?;
    }
    Ok(())
}
