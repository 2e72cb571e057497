use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("degenerate configuration: stacked constraint matrix has rank below 8")]
    DegenerateConfiguration,

    #[error(
        "translation vanishes (pure rotation); motion cannot be recovered from the epipolar vector"
    )]
    NearPureRotation,

    #[error("invalid scanline pair: alpha = {alpha} is not positive")]
    InvalidScanlinePair { alpha: f64 },

    #[error("determinant polynomial has no admissible real root")]
    NoRealSolution,

    #[error("numerically degenerate sample set: (2+k)^3 deflation remainder {remainder:e}")]
    NumericallyDegenerate { remainder: f64 },

    #[error("no RANSAC iteration produced a valid model")]
    RobustFailure,

    #[error("forward-backward filtering selected no samples")]
    EmptySelection,

    #[error("singular {0} block in refinement")]
    SingularBlock(&'static str),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
