use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("sequence length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no valid gaze points")]
    NoValidPoints,
    #[error("map has no positive mass after clipping negatives")]
    ZeroMass,
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("fixation set is empty")]
    EmptyFixations,
    #[error("annotation set is empty")]
    EmptyAnnotations,
    #[error("runs share no frames")]
    NoOverlap,
    #[error("missing flow for frame pair {0}->{1}")]
    MissingFlow(usize, usize),
    #[error("unknown loss term `{0}`")]
    UnknownTerm(String),
    #[error("zero kernel-weighted mass around the start point")]
    NoKernelMass,
    #[error("singular transform")]
    Singular,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures map to CLI exit code 2; everything else is an input error.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Singular | Error::ZeroMass | Error::NoKernelMass
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
