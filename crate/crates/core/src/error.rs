use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("alphabet of {alphabet} symbols does not fit into precision 2^{precision_bits}")]
    AlphabetTooLarge { alphabet: usize, precision_bits: u32 },

    #[error("precision must be within 1..=24 bits, got {0}")]
    InvalidPrecision(u32),

    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    /// A decode needed to refill the state but no words were left on the stack.
    /// For bits-back coding this means the initial buffer was too short.
    #[error("stream exhausted: not enough initial bits on the stack")]
    StreamExhausted,

    #[error("stream exhausted while coding datapoint {index}")]
    StreamExhaustedAt { index: usize },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid logistic parameters (mu={mu}, scale={scale})")]
    InvalidLogistic { mu: f64, scale: f64 },

    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("operation requires a tabular model")]
    NotTabular,

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("no valid coding order exists for this topology")]
    NoValidSchedule,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("corrupted stream: {0}")]
    CorruptStream(String),

    #[error("invalid datapoint: {0}")]
    InvalidData(String),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
