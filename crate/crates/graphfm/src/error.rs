//! Error type of the std layer and its mapping to process exit codes.

use std::path::PathBuf;

use graphfm_core::graph::GraphError;
use graphfm_core::model::ModelError;
use graphfm_core::posenc::EigenError;
use graphfm_core::sampler::SamplerError;
use graphfm_core::synth::SynthError;
use graphfm_core::trainer::{EvalError, OptimError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Validation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<OptimError> for Error {
    fn from(e: OptimError) -> Self {
        Error::Train(e.into())
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for validation/config failures, 3 for numeric
    /// failures (divergence, non-finite values, failed gradient checks).
    /// Usage errors (status 2) are reported by the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Eigen(_) => 3,
            Error::Train(TrainError::Divergence { .. }) => 3,
            Error::Train(TrainError::Optim(OptimError::NonFiniteGradient(_))) => 3,
            Error::Model(ModelError::Numerics(_)) | Error::Train(TrainError::Model(ModelError::Numerics(_))) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
