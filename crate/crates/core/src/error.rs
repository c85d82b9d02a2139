use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid window {window} for a {width}x{height} image")]
    InvalidWindow { window: usize, width: usize, height: usize },

    #[error("incompatible stats: {0}")]
    IncompatibleStats(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing seeds: no {0} scribbles")]
    MissingSeeds(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("gamma calibration failed: {0}")]
    Calibration(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("brute force refused for {0} nodes (limit 20)")]
    TooLarge(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
