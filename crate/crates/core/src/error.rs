use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("swing chart singular at beta = {beta} (|beta| must stay below pi/2)")]
    ChartSingularity { beta: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("thrust vector has length {got}, rotor set has {expected}")]
    ThrustLength { expected: usize, got: usize },

    #[error("thrust u[{index}] = {value} outside [0, {max}]")]
    ThrustOutOfRange { index: usize, value: f64, max: f64 },

    #[error("allocation matrix has rank {rank}, need 6")]
    RankDeficient { rank: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
