use thiserror::Error;

use crate::geometry::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible pinching positions: {0}")]
    Infeasible(Violation),

    #[error("user {user} coincides with pinching antenna {antenna}")]
    SingularGeometry { antenna: usize, user: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate receiver for user {user}: combined beamformer is zero")]
    DegenerateReceiver { user: usize },

    #[error("degenerate retraction at entry ({row}, {col})")]
    DegenerateRetraction { row: usize, col: usize },

    #[error("direction is not tangent at the base point (residual {residual:.3e})")]
    NotTangent { residual: f64 },

    #[error("non-finite objective or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("zero forcing infeasible: effective channel is rank deficient")]
    ZfInfeasible,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error beneath any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
