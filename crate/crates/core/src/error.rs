use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid tile: length {0} is below 2")]
    InvalidTile(usize),

    #[error("unsupported tile size {0}: must be a power of two")]
    UnsupportedTileSize(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("code {code} does not fit in {bits} bits")]
    Range { code: u32, bits: u8 },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("bad format: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("relative error undefined: reference gradient has zero norm")]
    UndefinedRatio,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("non-finite loss at evaluation point {0}")]
    NonFiniteLoss(usize),

    #[error("channel closed: {0}")]
    Channel(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
