use thiserror::Error;

/// Errors raised by the solvers, estimators and harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    /// Singular values straddling the truncation boundary coincide, so the
    /// spectral divergence formula is undefined.
    #[error("degenerate spectrum: sigma_{upper} and sigma_{lower} coincide across the rank boundary")]
    DegenerateSpectrum { upper: usize, lower: usize },

    #[error("oracle quadratic for alpha has no real root (discriminant {discriminant:e})")]
    NoRealRoot { discriminant: f64 },

    #[error("degenerate quantity: {0}")]
    Degenerate(String),

    #[error("ground truth is required: {0}")]
    MissingTruth(String),

    #[error("singular integrand in spectral integral at theta = {theta}")]
    SingularIntegrand { theta: f64 },

    #[error("state-evolution model breaks down at v = {v:e}: {reason}")]
    ModelBreakdown { v: f64, reason: String },

    #[error("no fixed point reached after {iterations} iterations")]
    NoFixedPoint { iterations: usize },

    #[error("unknown solver id `{0}`")]
    UnknownSolver(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
