//! Ego-conditioned traffic scene representation learning.
//!
//! The pipeline: procedurally generated lanelet networks are populated by an
//! IDM traffic simulation, heterogeneous traffic graphs are extracted per
//! frame, a graph encoder compresses the scene into a low-dimensional latent
//! state, and a physically constrained decoder reconstructs the probabilistic
//! path occupancy map from recurrently decoded virtual vehicles. The latent
//! states double as observations for a longitudinal-control RL environment.

pub mod decoder;
pub mod diff;
pub mod encoder;
pub mod env;
pub mod erf;
pub mod gradcheck;
pub mod graph;
pub mod lane;
pub mod loss;
pub mod naive;
pub mod sim;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("route error: {0}")]
    Route(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) | Error::Shape(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
