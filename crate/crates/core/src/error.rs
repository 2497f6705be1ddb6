use thiserror::Error;

/// Errors surfaced by scenario loading and simulation runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The scenario file could not be parsed.
    #[error("cannot parse scenario {path}: {message}")]
    Parse { path: String, message: String },

    /// The engine detected a broken internal invariant (for example an event in the past).
    #[error("internal consistency violation at t={time}: {message}")]
    Consistency { time: f64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    /// True for errors that stem from user input rather than the simulator itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. } | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
