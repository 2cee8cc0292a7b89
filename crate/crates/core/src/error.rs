use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum ZicError {
    #[error("degenerate channel: {0} direct gain has zero magnitude")]
    DegenerateChannel(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite loss {loss} at channel {channel}, epoch {epoch}")]
    NonFiniteLoss { loss: f64, channel: usize, epoch: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("result grids do not match: {0}")]
    GridMismatch(String),
    #[error("no model covers alpha = {alpha}; missing sub-interval {gap}")]
    NoModel { alpha: f64, gap: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ZicError>;
