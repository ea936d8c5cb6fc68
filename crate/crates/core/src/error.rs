use thiserror::Error;

use crate::tensor_ad::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("design {design:?} lies outside the design box {bounds:?}")]
    DesignOutOfBox { design: Vec<f64>, bounds: Vec<(f64, f64)> },
    #[error("{0} is not supported by this model")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
