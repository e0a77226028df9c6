use thiserror::Error;

/// Errors raised by the geometry, market, oracle and policy layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TradeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate cut direction: a'Ma = {quad:.3e} below tolerance {tol:.3e}")]
    DegenerateDirection { quad: f64, tol: f64 },

    #[error("non-central cut: offset {offset:.3e} from the center")]
    NonCentralCut { offset: f64 },

    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("context norm {norm} exceeds bound B = {bound}")]
    ContextNorm { norm: f64, bound: f64 },

    #[error("parameter norm {norm} exceeds bound A = {bound}")]
    ParameterNorm { norm: f64, bound: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("noise specification rejected: {0}")]
    Noise(String),

    #[error("context stream exhausted after {0} rows")]
    Exhausted(usize),

    #[error("replay file line {line}: {msg}")]
    Replay { line: usize, msg: String },

    #[error("operation requires a noisy market")]
    NoiselessMarket,

    #[error("operation requires a noiseless market")]
    NoisyMarket,

    #[error("estimator not ready: {0}")]
    NotReady(String),

    #[error("feedback contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TradeError>;
