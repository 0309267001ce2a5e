use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum DdmiError {
    #[error("cannot broadcast shapes {lhs:?} and {rhs:?}")]
    BroadcastMismatch { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("matmul inner extents differ: {lhs:?} x {rhs:?}")]
    MatmulMismatch { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("rank mismatch: expected rank {expected}, got shape {got:?}")]
    RankMismatch { expected: usize, got: Vec<usize> },

    #[error("conv2d output extent is not integral: input {input}x{input2}, kernel {kh}x{kw}, stride {stride}, padding {padding}")]
    ConvGeometry { input: usize, input2: usize, kh: usize, kw: usize, stride: usize, padding: usize },

    #[error("pooling requires even spatial extents, got {h}x{w}")]
    OddPoolExtent { h: usize, w: usize },

    #[error("groups {groups} does not divide channel count {channels}")]
    GroupMismatch { groups: usize, channels: usize },

    #[error("backward requires a scalar tensor, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("coordinate component {value} at row {row} outside [-1, 1]")]
    CoordinateOutOfRange { value: f64, row: usize },

    #[error("basis-field layout {layout} does not accept {dim}-d coordinates")]
    LayoutMismatch { layout: &'static str, dim: usize },

    #[error("invalid scale index {index}, set has {scales} scales")]
    InvalidScaleIndex { index: usize, scales: usize },

    #[error("encoder expects {expected}x{expected} input, got {got_h}x{got_w}")]
    WrongInputResolution { expected: usize, got_h: usize, got_w: usize },

    #[error("bernoulli target must be 0 or 1, found {value} at index {index}")]
    NonBinaryTarget { value: f64, index: usize },

    #[error("coordinate subset is empty")]
    EmptyCoordinateSubset,

    #[error("diffusion step {t} outside [1, {max}]")]
    StepOutOfRange { t: usize, max: usize },

    #[error("invalid noise schedule range: beta_start={beta_start}, beta_end={beta_end}")]
    InvalidScheduleRange { beta_start: f64, beta_end: f64 },

    #[error("non-finite value detected during sampling at step {step}")]
    NonFiniteSample { step: usize },

    #[error("non-finite value detected: {context}")]
    NonFinite { context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("grid extent must be >= 2, got {0}")]
    GridExtent(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DdmiError>;
