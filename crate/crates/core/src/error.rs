use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,
    #[error("image side {0} is below the minimum of 8")]
    InvalidSide(usize),
    #[error("entropy window {0} is below the minimum of 16")]
    InvalidWindow(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f32),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("too few samples: need at least {needed}, have {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("client shard is empty")]
    EmptyShard,
    #[error("no client updates to aggregate")]
    EmptyUpdateSet,
    #[error("update for round {actual} does not match round {expected}")]
    RoundMismatch { expected: u32, actual: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid split fractions: {0}")]
    InvalidSpec(String),
    #[error("requested size {0} is below the 1 KiB minimum")]
    SizeTooSmall(usize),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(u8),
    #[error("non-finite values after {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversize(usize),
    #[error("only {connected} of {expected} clients joined before the deadline")]
    ClientCountTimeout { connected: usize, expected: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
