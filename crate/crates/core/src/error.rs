use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("size limit exceeded: {what} = {actual} > {limit}")]
    SizeLimit {
        what: &'static str,
        actual: String,
        limit: String,
    },

    #[error("degenerate host: {0}")]
    DegenerateHost(String),

    #[error("closed form undefined: {0}")]
    UndefinedForm(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn size_limit(what: &'static str, actual: impl ToString, limit: impl ToString) -> Self {
        Error::SizeLimit {
            what,
            actual: actual.to_string(),
            limit: limit.to_string(),
        }
    }
}
