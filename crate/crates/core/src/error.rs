use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or out-of-range input values.
    #[error("input error: {0}")]
    Input(String),

    /// A linear-algebra step failed even after jitter.
    #[error("numerical error ({context}): {message}")]
    Numerical { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Prepends sampler context (iteration, cluster, category) to numerical failures.
    pub fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::Numerical { context, message } => Error::Numerical {
                context: if context.is_empty() {
                    ctx.as_ref().to_string()
                } else {
                    format!("{}; {}", ctx.as_ref(), context)
                },
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
