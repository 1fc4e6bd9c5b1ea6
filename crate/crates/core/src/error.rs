use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPd { pivot: usize, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty data in {0}")]
    EmptyData(&'static str),

    #[error("non-finite gradient step at layer {layer}, client {client}")]
    NonFiniteGradient { layer: usize, client: usize },

    #[error("aggregation weights sum to {0:e}, below 1e-12")]
    DegenerateWeights(f64),

    #[error("tape does not match data: {0}")]
    TapeMismatch(String),

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("finite-difference probe diverged")]
    NonFinite,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("invalid setting: {0}")]
    InvalidSetting(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("all v-steps below threshold; ratio undefined")]
    DegenerateStep,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}
