use std::path::PathBuf;

/// Errors produced by the crownforge toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("face {face} references vertex {index}, mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("per-vertex array `{name}` has length {len}, expected {expected}")]
    AttributeLength {
        name: &'static str,
        len: usize,
        expected: usize,
    },

    #[error("non-manifold edge ({0}, {1}) shared by {2} faces")]
    NonManifoldEdge(usize, usize, usize),

    #[error("target point set is empty")]
    EmptyTarget,

    #[error("point set is empty")]
    EmptySet,

    #[error("requested {k} samples from {n} points")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no per-vertex labels")]
    MissingLabels,

    #[error("no face has all three vertices labeled as abutment")]
    NoAbutmentFaces,

    #[error("degenerate margin loop: {0}")]
    DegenerateLoop(String),

    #[error("degenerate cut surface: {0}")]
    DegenerateFan(String),

    #[error("cut surface does not intersect the mesh")]
    NoIntersection,

    #[error("oriented points require normals")]
    MissingNormals,

    #[error("iso value {iso} outside the open range ({min}, {max})")]
    IsoOutOfRange { iso: f64, min: f64, max: f64 },

    #[error("ground-truth cloud has no curvature values")]
    MissingCurvature,

    #[error("ground-truth cloud has no margin flags")]
    MissingMarginFlags,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("token count {0} is not divisible by 4")]
    TNotDivisible(usize),

    #[error("adjacent mesh is not watertight")]
    AdjacentNotWatertight,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing case: {0}")]
    MissingCase(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoPath {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
