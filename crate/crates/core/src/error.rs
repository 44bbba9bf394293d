use thiserror::Error;

/// Errors raised by measure construction, transport, scheme propagation and configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: dimension mismatch, bad weights, out-of-range time, and so on.
    #[error("invalid input: {0}")]
    Input(String),

    /// A map or field produced a non-finite value.
    #[error("non-finite value in {context} at {witness}")]
    NumericDomain { context: String, witness: String },

    /// The Explicit Euler scheme left the stability ball `|Phi^n|_2 <= L`.
    #[error("scheme not L-stable: |Phi^{step}|_2 = {norm} exceeds L = {bound}")]
    Stability { step: usize, norm: f64, bound: f64 },

    /// Exact propagation would exceed a configured atom or tuple budget.
    #[error("{what}: predicted {predicted} exceeds cap {cap}; use monte-carlo mode or coarser parameters")]
    Resource {
        what: String,
        predicted: u128,
        cap: usize,
    },

    /// The operation refuses to run on this input (oracle size caps, wrong provenance).
    #[error("refused: {0}")]
    Refused(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
