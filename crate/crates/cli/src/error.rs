use dtrn_data::DataError;
use dtrn_model::ModelError;
use dtrn_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("metric error: {detail}")]
    Metric { detail: String },
    #[error("training error: {detail}")]
    Train { detail: String },
    #[error("suite error: {detail}")]
    Suite { detail: String },
    #[error("checkpoint error: {detail}")]
    Checkpoint { detail: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn metric(detail: impl Into<String>) -> Self {
        CliError::Metric { detail: detail.into() }
    }

    pub fn train(detail: impl Into<String>) -> Self {
        CliError::Train { detail: detail.into() }
    }

    pub fn suite(detail: impl Into<String>) -> Self {
        CliError::Suite { detail: detail.into() }
    }

    pub fn checkpoint(detail: impl Into<String>) -> Self {
        CliError::Checkpoint { detail: detail.into() }
    }
}
