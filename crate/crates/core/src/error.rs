use thiserror::Error;

/// Errors raised by the samkit library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A joint value lies outside its configured limits.
    #[error("joint q{joint} = {value} outside limits [{min}, {max}]")]
    JointLimit {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    /// A numerical routine produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Point data did not support a geometric fit.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// Fewer than the minimum number of markers were supplied.
    #[error("insufficient markers: need at least {needed}, got {got}")]
    InsufficientMarkers { needed: usize, got: usize },

    /// Mismatched configuration between cooperating components.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
