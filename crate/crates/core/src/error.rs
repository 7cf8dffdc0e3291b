use thiserror::Error;

use crate::linalg::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("ellipticity violated: eigenvalue {eigenvalue:e} below lower bound {bound:e}")]
    Ellipticity { eigenvalue: f64, bound: f64 },

    #[error("point {0:?} is not inside the domain")]
    NotInDomain(Point),

    #[error("weight is undefined at the centre point")]
    UndefinedPoint,

    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("degenerate mass at radius {radius:e}")]
    DegenerateMass { radius: f64 },

    #[error("coverage failure: {0}")]
    Coverage(String),

    #[error("no admissible root cuboid: {0}")]
    RootNotFound(String),

    #[error("tree depth exceeded: requested generation {requested}, tree depth {depth}")]
    DepthExceeded { requested: usize, depth: usize },

    #[error("precondition failed: {message}")]
    Precondition {
        message: String,
        point: Option<Point>,
    },

    #[error("region contains no grid nodes")]
    EmptyRegion,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
