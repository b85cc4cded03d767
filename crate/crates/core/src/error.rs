use thiserror::Error;

use crate::state::ObjectId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum So3Error {
    #[error("rotation residual too large to linearize (|q_w| = {qw:.4})")]
    ResidualTooLarge { qw: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("anchor object {0} is not among the declared object ids")]
    AnchorNotDeclared(ObjectId),
    #[error("no objects declared")]
    NoObjects,
    #[error("duplicate object id {0}")]
    DuplicateObject(ObjectId),
    #[error("`{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("`{name}` must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("`{name}` is invalid: {reason}")]
    Invalid { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("error vector has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown object id {0}")]
    UnknownObject(ObjectId),
    #[error("object {0} has not been initialized")]
    Uninitialized(ObjectId),
    #[error("object {0} is already initialized")]
    AlreadyInitialized(ObjectId),
    #[error("anchor object must be initialized before object {0}")]
    AnchorNotInitialized(ObjectId),
    #[error("propagation step {dt} s outside (0, {max}] s")]
    DtOutOfRange { dt: f64, max: f64 },
    #[error("non-finite IMU sample at t = {0}")]
    NonFiniteSample(f64),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("event at t = {t} precedes filter time {now}")]
    OutOfOrder { t: f64, now: f64 },
    #[error(transparent)]
    So3(#[from] So3Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no timestamp pairs within {max_dt} s")]
    NoPairs { max_dt: f64 },
    #[error("trajectory is empty")]
    Empty,
    #[error("degenerate geometry for alignment: {0}")]
    Degenerate(String),
    #[error("`max_dt` must be positive")]
    InvalidMaxDt,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input streams are not time-sorted ({0})")]
    Unsorted(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Errors raised while reading or writing files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}:{line}: record {record}: {message}")]
    Record {
        path: String,
        line: usize,
        record: usize,
        message: String,
    },
    #[error("{path}: unsupported log format version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Top-level failure of a simulate / fuse / eval run, grouped by category.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Process exit code: 3 configuration, 4 input data, 5 file system,
    /// 6 evaluation, 7 filter.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io(IoError::Config { .. }) => 3,
            PipelineError::Sim(SimError::Config(_)) => 3,
            PipelineError::Io(IoError::Io { .. }) => 5,
            PipelineError::Io(_) => 4,
            PipelineError::Sim(SimError::Unsorted(_)) => 4,
            PipelineError::Sim(SimError::Filter(_)) => 7,
            PipelineError::Eval(_) => 6,
        }
    }
}
