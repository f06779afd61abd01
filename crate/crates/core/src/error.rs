use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// The probe wrench differences never rose above the sensor noise floor.
    #[error("low signal: largest probe response {signal:.3e} is below noise floor {floor:.3e}")]
    LowSignal { signal: f64, floor: f64 },

    #[error("eigenscrew decomposition failed: {0}")]
    Decomposition(String),

    #[error("planner diverged: objective increased for {consecutive} consecutive steps (step {step})")]
    Diverged { step: usize, consecutive: usize },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
