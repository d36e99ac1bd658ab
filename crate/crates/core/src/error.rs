//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("trace of Hermitian product has imaginary part {imag:e}")]
    NonRealTrace { imag: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value overflows linear space (ln = {0})")]
    Overflow(f64),

    #[error("value underflows linear space (ln = {0})")]
    Underflow(f64),

    #[error("no bracket: target {target} below attainable minimum {minimum}")]
    NoBracket { target: f64, minimum: f64 },

    #[error("invalid IGG parameters for cluster {cluster}: a = {a}, b = {b}, c = {c} (N_k = {n_k}, beta_k = {beta})")]
    InvalidIggParams { cluster: usize, a: f64, b: f64, c: f64, n_k: f64, beta: f64 },

    #[error("responsibilities collapsed for pixel {pixel}")]
    NumericalCollapse { pixel: usize },

    #[error("non-finite ELBO: {0}")]
    NonFinite(String),

    #[error("every cluster fell below the pruning threshold {threshold}")]
    AllPruned { threshold: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("cluster {0} has an all-zero mean covariance")]
    ZeroTrace(usize),

    #[error("constant intensity in cluster {cluster}, channel {channel}")]
    ZeroVariance { cluster: usize, channel: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file at byte offset {offset}")]
    TruncatedFile { offset: u64 },

    #[error("non-Hermitian entry at pixel {pixel}: {detail}")]
    NonHermitianEntry { pixel: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable class name, used by the CLI and the C ABI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonRealTrace { .. } => "NonRealTrace",
            Error::Domain(_) => "DomainError",
            Error::Overflow(_) => "Overflow",
            Error::Underflow(_) => "Underflow",
            Error::NoBracket { .. } => "NoBracket",
            Error::InvalidIggParams { .. } => "InvalidIggParams",
            Error::NumericalCollapse { .. } => "NumericalCollapse",
            Error::NonFinite(_) => "NonFinite",
            Error::AllPruned { .. } => "AllPruned",
            Error::DegenerateData(_) => "DegenerateData",
            Error::ZeroTrace(_) => "ZeroTrace",
            Error::ZeroVariance { .. } => "ZeroVariance",
            Error::Format(_) => "FormatError",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::NonHermitianEntry { .. } => "NonHermitianEntry",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::AtIteration { source, .. } => source.class(),
        }
    }

    /// True for failures of the numerical method itself, as opposed to bad
    /// input files or configuration.
    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            Error::Format(_)
                | Error::TruncatedFile { .. }
                | Error::NonHermitianEntry { .. }
                | Error::Config(_)
                | Error::Io(_)
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
