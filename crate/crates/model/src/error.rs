use thiserror::Error;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] dtrn_tensor::TensorError),
    #[error(transparent)]
    Data(#[from] dtrn_data::DataError),
    #[error("model config: {detail}")]
    Config { detail: String },
}

impl ModelError {
    pub fn config(detail: impl Into<String>) -> Self {
        ModelError::Config { detail: detail.into() }
    }
}
