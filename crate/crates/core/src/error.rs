use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("degenerate shape {rows}x{cols}")]
    DegenerateShape { rows: usize, cols: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("parameter `{param}`: dimension {dim} has extent {extent}, smaller than {shards} shards")]
    ShardTooSmall {
        param: String,
        dim: usize,
        extent: usize,
        shards: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("empty parameter list")]
    EmptyParams,

    #[error("duplicate parameter id {0}")]
    DuplicateParam(usize),

    #[error("missing shard from group rank {rank} for {tag}")]
    MissingShard { rank: usize, tag: String },

    #[error("inconsistent collective buffers: {0}")]
    BufferMismatch(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("ownership violation: {0}")]
    Ownership(String),

    #[error("rank {rank}: live memory went negative at {time_us} us")]
    NegativeLiveMemory { rank: usize, time_us: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    /// Attach a parameter name to a non-finite error raised deep in the numerics.
    pub fn for_param(self, name: &str) -> Self {
        match self {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("parameter `{name}` ({context})"),
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
