use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("stopping rule is not a stopping time: {0}")]
    NotAStoppingTime(String),

    #[error("rejection times are not nested in alpha: grid index {index} rejects later than index {prev}")]
    NotNested { prev: usize, index: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("calibrator does not integrate to one (integral = {integral})")]
    CalibratorIntegral { integral: f64 },

    #[error("factor condition violated at x = {x}: {reason}")]
    FactorCondition { x: f64, reason: String },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("tree parse error on line {line}: {reason}")]
    TreeParse { line: usize, reason: String },

    #[error("stopping-time enumeration too large: {count} stopping times exceed the cap of {cap}")]
    EnumerationTooLarge { count: String, cap: u64 },

    #[error("tree depth {depth} exceeds the supported maximum {max}")]
    DepthTooLarge { depth: usize, max: usize },

    #[error("payload is not safe: max expected value over stopping times is {value}")]
    Unsafe { value: String },

    #[error("payload is not a martingale at node {node}: {reason}")]
    NotMartingale { node: usize, reason: String },

    #[error("invalid p-value payload: {0}")]
    InvalidPValue(String),

    #[error("empty family")]
    EmptyFamily,

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
