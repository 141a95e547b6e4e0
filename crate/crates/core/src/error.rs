use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("beta = {0} is outside the admissible range")]
    BetaOutOfRange(f64),

    #[error("fields live on different grids (N = {left} vs N = {right})")]
    GridMismatch { left: usize, right: usize },

    #[error("field has nonzero mean {mean:e}; negative fractional powers need mean-zero input")]
    NonZeroMean { mean: f64 },

    #[error("diffeomorphism sample has no inverse map")]
    MissingInverse,

    #[error("CFL condition violated: dt * max|u| * N / (2 pi) = {courant:.4} > 0.5 (max|u| = {max_u:.6e})")]
    Cfl { courant: f64, max_u: f64 },

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("singular operator matrix: {0}")]
    Singular(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("spectrum covers eigenvalues up to {available}, but {needed} is required")]
    Coverage { needed: f64, available: f64 },

    #[error("trajectory does not vanish at the endpoints (|w(0)| = {start:e}, |w(T)| = {end:e})")]
    Endpoint { start: f64, end: f64 },

    #[error("inconsistent sampling: {0}")]
    Sampling(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::BetaOutOfRange(beta))
    }
}
