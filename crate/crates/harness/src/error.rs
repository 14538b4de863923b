use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] qforce_core::Error),
    #[error("{0}")]
    Contract(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("training did not reach mean reward {target} within {episodes} episodes (best {best:.3})")]
    TrainingFailed { target: f64, episodes: usize, best: f64 },
}

impl HarnessError {
    pub fn format(what: &'static str, msg: impl ToString) -> Self {
        HarnessError::Format { what, msg: msg.to_string() }
    }

    /// 1 for contract violations, 2 for I/O and unreadable files.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_) | HarnessError::Format { .. } => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::format("JSON", e)
    }
}

impl From<image::ImageError> for HarnessError {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => HarnessError::Io(io),
            other => HarnessError::format("image", other),
        }
    }
}
