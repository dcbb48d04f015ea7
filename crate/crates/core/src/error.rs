use thiserror::Error;

/// Crate-wide error type. `exit_code` maps variants onto the CLI contract:
/// 1 for configuration problems, 2 for runtime failures.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("timestamp before epoch (negative absolute time)")]
    BeforeEpoch,

    #[error("duration overflow: |difference| exceeds 2^62 fs")]
    DurationOverflow,

    #[error("unsorted input stream at position {position}: {context}")]
    Unsorted { position: usize, context: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("series do not overlap in time")]
    DisjointSeries,

    #[error("no pulse found in waveform")]
    NoPulse,

    #[error("no threshold crossing in input waveform")]
    NoEdge,

    #[error("sampling too coarse: Nyquist rate must exceed 3x the filter bandwidth")]
    NyquistViolation,

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
