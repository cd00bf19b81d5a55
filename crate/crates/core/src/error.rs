use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid extent {width}x{height}")]
    InvalidExtent { width: usize, height: usize },
    #[error("invalid tiling: tile {tile}, stride {stride}")]
    InvalidTiling { tile: usize, stride: usize },
    #[error("tile at ({x}, {y}) of size {size} lies outside the padded {width}x{height} extent")]
    TileOutOfBounds {
        x: i64,
        y: i64,
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutsideImage {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("image {width}x{height} is not divisible by the required factor {divisor}")]
    IndivisibleSize {
        width: usize,
        height: usize,
        divisor: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no positive anchor assignment in the training stream")]
    NoPositiveAnchors,
    #[error("training data contains a single class only")]
    SingleClass,
    #[error("need at least {needed} slides, got {got}")]
    TooFewSlides { needed: usize, got: usize },
    #[error("unknown slide id {0:?}")]
    UnknownSlide(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("checkpoint checksum mismatch (truncated or corrupt file)")]
    Checksum,
    #[error("not a checkpoint container (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint stage mismatch: expected {expected}, found {found}")]
    StageMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
