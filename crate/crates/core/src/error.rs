use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum ZoError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample index {index} out of range for sample space of size {size}")]
    InvalidSample { index: usize, size: usize },

    #[error("non-finite value: {message}{}", fmt_context(.iteration, .point))]
    Numeric {
        message: String,
        iteration: Option<usize>,
        point: Option<Vec<f64>>,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_context(iteration: &Option<usize>, point: &Option<Vec<f64>>) -> String {
    let mut s = String::new();
    if let Some(it) = iteration {
        s.push_str(&format!(" at iteration {it}"));
    }
    if let Some(x) = point {
        s.push_str(&format!(" (x = {x:?})"));
    }
    s
}

impl ZoError {
    pub fn numeric(message: impl Into<String>) -> Self {
        ZoError::Numeric {
            message: message.into(),
            iteration: None,
            point: None,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        ZoError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ZoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the iteration index to a numeric error; other variants pass through.
    pub fn at_iteration(self, iter: usize) -> Self {
        match self {
            ZoError::Numeric { message, point, .. } => ZoError::Numeric {
                message,
                iteration: Some(iter),
                point,
            },
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, ZoError::Numeric { .. })
    }

    /// Process exit code: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() {
            3
        } else {
            2
        }
    }
}

pub type Result<T> = std::result::Result<T, ZoError>;
