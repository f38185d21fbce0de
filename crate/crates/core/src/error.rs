use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tone bin {0} outside [1, 128]")]
    InvalidBin(usize),
    #[error("stream length must be positive")]
    EmptyStream,
    #[error("expected a frame of {expected} samples, got {got}")]
    FrameLength { expected: usize, got: usize },
    #[error("n_contacts {0} outside 0..=3")]
    InvalidContacts(u8),
    #[error("air distance must be positive, got {0}")]
    ZeroDistance(f64),
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error("nibble {0} does not fit in four bits")]
    InvalidNibble(u8),
    #[error("frames per symbol must be at least 1")]
    InvalidSymbolLength,
    #[error("scenario invalid:\n{}", .0.join("\n"))]
    Scenario(Vec<String>),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
