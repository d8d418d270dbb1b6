use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point lies on a singular locus of the surface")]
    SingularPoint,
    #[error("axis class is unaligned; no frame axis exists")]
    InvalidAxisClass,
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("degenerate sample set")]
    Degenerate,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("truncated raster in {0}")]
    Truncated(String),
    #[error("raster size {got:?} does not match camera {expected:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("required input missing: {0}")]
    InputMissing(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("Levenberg-Marquardt diverged after {rejections} consecutive rejected steps")]
    Diverged { rejections: usize, params: Vec<f64>, cost: f64 },
    #[error("non-finite residuals at the initial parameters")]
    NonFinite,
}

#[derive(Debug, Error, Clone)]
pub enum FitError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("no consensus: best inlier fraction {fraction:.3}")]
    NoConsensus {
        fraction: f64,
        best: Option<Box<crate::fitting::CleanedInstance>>,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("no disambiguation candidate covers half of the region of surface {0}")]
    AllConfigsInvalid(u16),
    #[error("surface {0}: mesh extent still truncated after maximum doublings")]
    ExtentOverflow(u16),
    #[error("vertex {0} could not be projected onto its surface")]
    ProjectionFailed(usize),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("no solid is visible from the camera")]
    EmptyFrame,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("sphere has no axis")]
    NoAxis,
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty point set")]
    EmptySet,
    #[error("no matched pair carries an axis")]
    NoAxedMatches,
}

/// Error from a pipeline stage, tagged with the stage name.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input error: {0}")]
    Input(#[from] FormatError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl PipelineError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage, message: err.to_string() }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 3,
            _ => 2,
        }
    }
}
