//! Simulation and verification of generalized and multifractional Rosenblatt
//! processes: second-chaos double integrals of a two-exponent kernel on a
//! truncated grid, their spectral representation, sample paths, local times,
//! and the statistical checks built on them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod domain;
pub mod error;
pub mod exec;
pub mod hurst;
pub mod kernel;
mod linalg;
pub mod localtime;
pub mod paths;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod suite;

pub use domain::{Grading, TruncatedDomain};
pub use error::{Error, Result};
pub use exec::Execution;
pub use hurst::{HurstPair, HurstProfile};
pub use kernel::KernelMatrix;
