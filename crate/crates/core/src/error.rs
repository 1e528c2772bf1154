use thiserror::Error;

/// Errors produced anywhere in the reconstruction and denoising stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("all points coincide; bounding box has zero extent")]
    DegenerateExtent,

    #[error("mesh has no face of positive area")]
    EmptyMesh,

    #[error("empty input")]
    EmptyInput,

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("point {0} lies outside the reconstruction domain")]
    PointOutsideDomain(usize),

    #[error(
        "solver did not reach the requested tolerance: relative residual {residual:.3e} after {iterations} iterations{}",
        match .ipsr_iteration { Some(k) => format!(" (iPSR iteration {k})"), None => String::new() }
    )]
    SolverDiverged {
        residual: f64,
        iterations: usize,
        ipsr_iteration: Option<usize>,
    },

    #[error("no sign crossing in the scalar grid; isosurface is empty")]
    EmptySurface,

    #[error("covariance matrix is not symmetric")]
    NotSymmetric,

    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateExtent => "DegenerateExtent",
            Error::EmptyMesh => "EmptyMesh",
            Error::EmptyInput => "EmptyInput",
            Error::MissingNormals => "MissingNormals",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::PointOutsideDomain(_) => "PointOutsideDomain",
            Error::SolverDiverged { .. } => "SolverDiverged",
            Error::EmptySurface => "EmptySurface",
            Error::NotSymmetric => "NotSymmetric",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Parse { .. } => "ParseError",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::Io(_) => "IoError",
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
