use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("admissibility violation: u_{earlier} precedes u_{later}")]
    Admissibility { earlier: usize, later: usize },
    #[error("enumeration horizon exceeded: requested {requested}, horizon {horizon}")]
    Horizon { requested: usize, horizon: usize },
    #[error("kernel construction failed: {0}")]
    Kernel(String),
    #[error("estimator precondition failed: {0}")]
    Estimator(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
