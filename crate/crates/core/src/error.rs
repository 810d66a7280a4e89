use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value {value} at point {index} (coordinates {coords:?})")]
    NonFinite {
        index: usize,
        coords: Vec<f64>,
        value: f64,
    },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("consistency check failed for `{problem}` at {point:?}: det(D²u) = {det}, f = {f}")]
    Inconsistent {
        problem: String,
        point: Vec<f64>,
        det: f64,
        f: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, MaError>;
