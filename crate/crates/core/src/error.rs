use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structural model violates one of its invariants.
    #[error("invalid model: {0}")]
    Model(String),
    /// The data do not support the requested estimate (e.g. an empty instrument cell).
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A perturbation could not be built because a regularity condition fails.
    #[error("construction error: {0}")]
    Construction(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
