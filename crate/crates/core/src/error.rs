use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension { context: String, expected: usize, actual: usize },

    #[error("invalid activation `{name}`: {reason}")]
    Activation { name: String, reason: String },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("layer {first} outputs {produced} values but layer {second} expects {consumed}")]
    Chain { first: usize, second: usize, produced: usize, consumed: usize },

    #[error("normalization: {0}")]
    Normalization(String),

    #[error("categorization covers {actual} stages but {expected} are required")]
    PatternCount { expected: usize, actual: usize },

    #[error("region index {region} out of range for activation with {regions} regions")]
    Region { region: usize, regions: usize },

    #[error("tree would need {required} leaves, limit is {limit}")]
    LeafBudget { required: f64, limit: usize },

    #[error("tree depth {depth} exceeds limit {limit}")]
    DepthBudget { depth: usize, limit: usize },

    #[error("unsupported layer: {0}")]
    Unsupported(String),

    #[error("input routed into a pruned branch at node {node}")]
    PrunedBranch { node: usize },

    #[error("schema error at {location}: {reason}")]
    Schema { location: String, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension { context: context.into(), expected, actual }
    }

    pub(crate) fn schema(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema { location: location.into(), reason: reason.into() }
    }
}
