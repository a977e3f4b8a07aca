use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps onto one CLI exit code (see [`ZolError::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum ZolError {
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("verification failed: check `{check}` on seed {seed} (error {error:e})")]
    Verification { check: String, seed: u64, error: f64 },
}

impl ZolError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ZolError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        ZolError::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 config, 3 I/O, 4 numeric/training, 5 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            ZolError::Config(_) => 2,
            ZolError::Io { .. } | ZolError::Format { .. } => 3,
            ZolError::Verification { .. } => 5,
            ZolError::Numeric(_)
            | ZolError::Shape(_)
            | ZolError::Precondition(_)
            | ZolError::Degenerate(_)
            | ZolError::Diverged { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, ZolError>;
