use thiserror::Error;

/// Errors surfaced by the protocol library and the simulator.
///
/// `Input` and `Config` are caller mistakes. `Protocol` means an internal
/// contract was breached (a client asked for a piece it already holds, a
/// node was released twice, ...) and indicates a bug rather than bad data.
#[derive(Debug, Error)]
pub enum MoviError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl MoviError {
    pub fn input(msg: impl Into<String>) -> Self {
        MoviError::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        MoviError::Config(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        MoviError::Protocol(msg.into())
    }

    /// Process exit code for the CLI: 2 for invariant breaches, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            MoviError::Protocol(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = MoviError> = std::result::Result<T, E>;
