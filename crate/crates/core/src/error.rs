use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Validation(Box<ValidationError>),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ValidationError> for Error {
    fn from(e: ValidationError) -> Self {
        Error::Validation(Box::new(e))
    }
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }

    /// True for errors that stem from numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

/// Rejections raised while loading a graph document.
#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("graph has no nodes")]
    NoNodes,

    #[error("node {node} references unknown node type `{type_name}`")]
    UnknownNodeType { node: usize, type_name: String },

    #[error("edge #{edge} references unknown edge type `{type_name}`")]
    UnknownEdgeType { edge: usize, type_name: String },

    #[error("edge type `{edge_type}` references unknown node type `{type_name}`")]
    UnknownSignatureType { edge_type: String, type_name: String },

    #[error("duplicate type name `{0}`")]
    DuplicateTypeName(String),

    #[error("duplicate node id {0}")]
    DuplicateNodeId(usize),

    #[error("node ids must be dense 0..{count}; id {id} is missing")]
    SparseNodeIds { count: usize, id: usize },

    #[error("edge #{edge} ({src} -> {dst}) references a node id out of range")]
    EdgeEndpointOutOfRange { edge: usize, src: usize, dst: usize },

    #[error(
        "edge #{edge} ({src} -> {dst}) of type `{edge_type}` has endpoint types \
         ({src_type}, {dst_type}) but the signature is ({expected_src}, {expected_dst})"
    )]
    SignatureViolation {
        edge: usize,
        edge_type: String,
        src: usize,
        dst: usize,
        src_type: String,
        dst_type: String,
        expected_src: String,
        expected_dst: String,
    },

    #[error("node {node} of type `{type_name}` has {got} features, expected {expected}")]
    RaggedFeatures {
        node: usize,
        type_name: String,
        expected: usize,
        got: usize,
    },

    #[error("node {node} has a non-finite feature value")]
    NonFiniteFeature { node: usize },

    #[error("metapath `{name}`: {reason}")]
    InvalidMetapath { name: String, reason: String },

    #[error("split `{split}`: {reason}")]
    InvalidSplit { split: String, reason: String },
}
