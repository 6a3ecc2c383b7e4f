use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Hurst parameter {value} outside (1/2, 1) (boundary margin {margin})")]
    HurstOutOfRange { value: f64, margin: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite kernel average in cell pair ({row}, {col})")]
    NonFiniteKernel { row: usize, col: usize },

    #[error("truncation budget exceeded: L = {left_cut} still leaves tail ratio {ratio:.3e} (tolerance {tol:.1e})")]
    TruncationBudget { left_cut: f64, ratio: f64, tol: f64 },

    #[error("eigen-solver failure: {0}")]
    EigenSolver(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("only {found} eigenvalues exceed tolerance at (s, t) = ({s}, {t}); v-tail exponent {tail_exponent:.3} is not integrable")]
    NonIntegrable {
        s: f64,
        t: f64,
        found: usize,
        tail_exponent: f64,
    },

    #[error("empty interval: {0}")]
    EmptyInterval(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
