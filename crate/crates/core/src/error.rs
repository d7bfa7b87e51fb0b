use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("propagation failed: {0}")]
    Propagation(String),
    #[error("posterior has no mass on the grid")]
    ZeroPosterior,
    #[error("chain {chain} acceptance {acceptance:.4} is below 1%; retune the proposal widths")]
    LowAcceptance { chain: usize, acceptance: f64 },
    #[error("FFT estimate unavailable: {0}")]
    Spectrum(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
