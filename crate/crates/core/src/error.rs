use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {coord:?} outside [0, 2^{depth}) at scale {scale}")]
    OutOfRange {
        coord: [i32; 3],
        depth: u32,
        scale: u32,
    },
    #[error("empty point set")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("checkpoint mismatch: stream expects {expected:#018x}, model is {actual:#018x}")]
    CheckpointMismatch { expected: u64, actual: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("RD curves do not overlap in PSNR")]
    NoOverlap,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
