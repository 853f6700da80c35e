use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("usage error: {0}")]
    Usage(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("shape chain violation in {network} at layer {layer}: {detail}")]
    ShapeChain { network: String, layer: usize, detail: String },
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("checksum mismatch: header {expected:#010x}, payload {actual:#010x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("zero-probability symbol at index {index} (value {value})")]
    ZeroProbability { index: usize, value: i32 },
    #[error("alphabet of {size} symbols exceeds coder capacity of {max}")]
    Capacity { size: usize, max: usize },
    #[error("symbol {symbol} at index {index} outside alphabet of {alphabet} symbols")]
    Coding { index: usize, symbol: u32, alphabet: usize },

    #[error("infeasible budget {budget} bytes: minimum achievable total is {min_total} bytes{note}")]
    Infeasible { budget: u64, min_total: u64, note: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Process exit code: 1 usage, 2 format/corruption, 3 infeasible.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Usage(_) => 1,
            Error::Infeasible { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}
