use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` and `Data` describe bad user input (the CLI maps them to exit
/// code 2); the remaining variants are runtime failures (exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, files, flags).
    pub fn is_user_input(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Data(_) | Error::Graph(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
