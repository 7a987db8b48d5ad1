use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("scattering integral did not converge for user {user}, AP {ap}")]
    Quadrature { user: usize, ap: usize },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, trace {trace:e})")]
    NotPsd { min_eig: f64, trace: f64 },

    #[error("linear solve failed: {0}")]
    Singular(&'static str),

    #[error("Hermitian eigendecomposition failed to converge")]
    Eigen,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("{skipped} of {total} coherence blocks failed numerically")]
    TooManySkipped { skipped: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
