use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward called on a loss that was not recorded on this tape")]
    BackwardBeforeForward,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no valid rows: every row is fully masked")]
    NoValidRows,

    #[error("empty neighbourhood at node {0}")]
    EmptyNeighbourhood(usize),

    #[error("missing degree statistics for {0}; compute them on the training split or load a checkpoint")]
    MissingDegreeStats(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid asset: {0}")]
    Asset(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("binding: {0}")]
    Binding(String),

    #[error("asset `{asset}`: {source}")]
    InAsset {
        asset: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (assets: {assets})")]
    NonFiniteLoss { epoch: usize, batch: usize, assets: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("skinning: {0}")]
    Skinning(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_asset(self, asset: impl Into<String>) -> Self {
        Error::InAsset { asset: asset.into(), source: Box::new(self) }
    }
}
