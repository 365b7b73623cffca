use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("site {site} out of range for a register with {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("observable on site {site} is not a binary observable: {reason}")]
    NotBinaryObservable { site: usize, reason: String },

    #[error("observables must act on distinct sites (site {0} repeated)")]
    RepeatedSite(usize),

    #[error("measurement branch has vanishing norm ({0:.3e})")]
    DegenerateBranch(f64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("device can furnish at most {limit} copies but {requested} were requested")]
    InsufficientCopies { limit: u64, requested: u64 },

    #[error("report did not pass; {0}")]
    FailedReport(&'static str),

    #[error("total dimension {dim} exceeds the dense limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
