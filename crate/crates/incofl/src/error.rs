//! Crate-wide error type.

use crate::aggregation::LayerKey;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("matmul dimensions do not agree: {left:?} x {right:?}")]
    MatmulDims { left: Vec<usize>, right: Vec<usize> },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensorLength { shape: Vec<usize>, len: usize },

    #[error("tensor contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("zero anchor gradient")]
    ZeroAnchor,

    #[error("groups are not nested: group {small_group} has depth {small_depth} but group {large_group} has depth {large_depth} in stage {stage}")]
    NonNestedGroups {
        small_group: usize,
        large_group: usize,
        stage: usize,
        small_depth: usize,
        large_depth: usize,
    },

    #[error("client {client} appears in more than one group")]
    DuplicateClient { client: usize },

    #[error("missing contribution from client {client} for layer {layer}")]
    MissingContribution { client: usize, layer: LayerKey },

    #[error("label {label} is outside [0, {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training shard is empty")]
    EmptyShard,

    #[error("bad IDX magic number: expected {expected:#010x}, got {got:#010x}")]
    IdxBadMagic { expected: u32, got: u32 },

    #[error("IDX file truncated: needed {needed} bytes, had {had}")]
    IdxTruncated { needed: usize, had: usize },

    #[error("IDX image/label counts differ: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("could not satisfy min_per_client={min_per_client} for {clients} clients after {retries} retries")]
    PartitionInfeasible {
        clients: usize,
        min_per_client: usize,
        retries: usize,
    },

    #[error("degenerate features: a feature matrix is constant in every column")]
    DegenerateFeatures,

    #[error("feature matrices need at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },

    #[error("smoothness constant must be positive")]
    ZeroSmoothness,

    #[error("target tolerance is not reachable with these constants (denominator {denominator} <= 0)")]
    EpsilonUnreachable { denominator: f64 },

    #[error("round {round}, client {client}: {source}")]
    Training {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("failed to parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
