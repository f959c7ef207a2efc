use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A group element lies outside the injectivity chart of the logarithm.
    #[error("group element outside the log chart (angle {angle:.6} rad, limit {limit:.6} rad)")]
    OutOfChart { angle: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("apex outside the admissible box at coordinate {coordinate} (value {value}, box [{lower}, {upper}])")]
    ApexOutsideSet {
        coordinate: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// |h·M| reached the real-valuedness limit of the discrete rotation step.
    #[error("chart violation in plant {plant} at step {step}: |h*M| = {value:.6}")]
    ChartViolation { plant: usize, step: usize, value: f64 },

    #[error("singular mass matrix")]
    SingularMass,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("degenerate multiplier system: {0}")]
    DegenerateSystem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
