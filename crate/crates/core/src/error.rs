use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("episode is over (t = {t}, horizon = {horizon})")]
    EpisodeOver { t: usize, horizon: usize },

    #[error("horizon must be at least one step")]
    EmptyHorizon,

    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("negative multiplier at index {index}: {value}")]
    NegativeMultiplier { index: usize, value: f64 },

    #[error("training diverged during episode {episode}")]
    Diverged { episode: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing checkpoint for round {0}")]
    MissingCheckpoint(usize),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
