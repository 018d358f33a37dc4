use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("point ({x:.3}, {y:.3}) is outside walkable space")]
    NotWalkable { x: f64, y: f64 },

    #[error("no path from ({x:.3}, {y:.3}) to the target")]
    Unreachable { x: f64, y: f64 },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("seat plan has {capacity} seats, cannot place {requested} agents")]
    SeatCapacity { requested: usize, capacity: usize },

    #[error("negative density {0}")]
    NegativeDensity(f64),

    #[error("simulation did not terminate within {limit_s} s: {remaining} agents still inside ({detail})")]
    NonTermination {
        limit_s: f64,
        remaining: usize,
        detail: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("reference fixture corrupted: {0}")]
    Fixture(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing scenarios: {}", .0.join(", "))]
    MissingScenarios(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
