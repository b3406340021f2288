use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::DataError;
use crate::models::ModelError;
use crate::retrieval::RetrievalError;
use crate::tensor::TensorError;
use crate::training::TrainError;
use crate::viz::VizError;

/// Any failure surfaced by the command-line workflows.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

const RUNTIME: i32 = 1;
const CONFIG: i32 = 2;
const DATA: i32 = 3;

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Config(_) | ModelError::WrongKind { .. } => CONFIG,
        ModelError::Input(_) => DATA,
        ModelError::Tensor(_) | ModelError::Nn(_) => RUNTIME,
    }
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for data
    /// problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => CONFIG,
            Error::Data(_) => DATA,
            Error::Model(e) => model_code(e),
            Error::Train(e) => match e {
                TrainError::Config(_) => CONFIG,
                TrainError::Data(_) => DATA,
                TrainError::Model(m) => model_code(m),
                _ => RUNTIME,
            },
            Error::Retrieval(e) => match e {
                RetrievalError::Model(m) => model_code(m),
                RetrievalError::Tensor(_) | RetrievalError::Degenerate(_) => RUNTIME,
                _ => DATA,
            },
            Error::Viz(e) => match e {
                VizError::Model(m) => model_code(m),
                VizError::Untrained => CONFIG,
                VizError::Input(_) | VizError::Data(_) => DATA,
                VizError::Tensor(_) => RUNTIME,
            },
            Error::Checkpoint(e) => match e {
                CheckpointError::Model(m) => model_code(m),
                _ => DATA,
            },
            Error::Tensor(_) => RUNTIME,
        }
    }
}
