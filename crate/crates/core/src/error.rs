use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("framing error at byte {offset}: {detail}")]
    Framing { offset: usize, detail: String },

    #[error("index {index} at scale {scale} is not below codebook size {limit}")]
    Corruption { scale: usize, index: u32, limit: usize },

    #[error("background not yet received")]
    BackgroundMissing,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Numeric(#[from] numcore::NumError),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
