use crate::lattice::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid term {0:?}: terms are non-empty and contain no whitespace, '|' or '\u{2400}'")]
    InvalidTerm(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("ingestion error at record {index}: {reason}")]
    Ingest { index: usize, reason: String },
    #[error("undefined context: context count is zero")]
    UndefinedContext,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("node {0} has no outgoing edges")]
    LeafNode(NodeId),
    #[error("node {0} has an empty outcome vocabulary; the query cannot be scored")]
    EmptyVocabulary(NodeId),
    #[error(
        "normalization defect at node {node}: seen back-off mass {seen_mass}, unseen mixture mass {unseen_mixture}"
    )]
    NormalizationDefect {
        node: NodeId,
        seen_mass: f64,
        unseen_mixture: f64,
    },
    #[error("zero probability at position {position}")]
    ZeroProbability { position: usize },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error reflects bad input data rather than a broken invariant.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NormalizationDefect { .. })
    }
}
