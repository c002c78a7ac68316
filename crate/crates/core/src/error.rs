use thiserror::Error;

/// Errors raised by the geometry routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("tangent vector is not unit or not orthogonal to the base point (residual {residual:e})")]
    NotUnitTangent { residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("E + B is singular: principal curvature {eigenvalue} equals -1")]
    DualSingular { eigenvalue: f64 },

    #[error("immersion is rank deficient")]
    RankDeficient,

    #[error("normal vector cannot be normalized")]
    DegenerateNormal,

    #[error("horospheres are not on one vertical line (residual {residual:e})")]
    NotOnOneRay { residual: f64 },

    #[error("vector is not tangent to the null cone (residual {residual:e})")]
    NotTangent { residual: f64 },

    #[error("tangent hyperplane system is degenerate")]
    DegenerateTangency,

    #[error("star Weingarten operator is degenerate (eigenvalue {eigenvalue:e})")]
    DegenerateStar { eigenvalue: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("finite-difference step {0:e} underflows")]
    StepUnderflow(f64),

    #[error("ricci route needs n >= 4, got n = {n}")]
    NTooSmall { n: usize },

    #[error("factor is not admissible ({class}): worst margin {worst_margin:e} at sample {worst_sample}")]
    NotAdmissible {
        class: String,
        worst_margin: f64,
        worst_sample: usize,
    },

    #[error("convexity lost at sample {sample}: min star eigenvalue {min_eigenvalue:e}")]
    ConvexityLost { sample: usize, min_eigenvalue: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeomError {
    fn from(e: std::io::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GeomError>;
