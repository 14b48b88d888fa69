use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: u64, loss: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing keys in response: {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("authentication rejected by endpoint (HTTP {status})")]
    Auth { status: u16 },

    #[error("request failed after {attempts} attempt(s): {last}")]
    Network { attempts: u32, last: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
