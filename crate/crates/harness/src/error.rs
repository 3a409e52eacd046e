use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown detector `{name}` for {mode} mode")]
    UnknownDetector { name: String, mode: &'static str },
    #[error("detector list is empty")]
    EmptyDetectors,
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("trial {trial} at {snr_db} dB failed: {source}")]
    Trial {
        trial: u64,
        snr_db: f64,
        #[source]
        source: taser_core::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Whether the error stems from bad user input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::UnknownDetector { .. } | HarnessError::EmptyDetectors | HarnessError::InvalidConfig(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
