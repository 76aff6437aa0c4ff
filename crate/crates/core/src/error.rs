//! Error type shared by every module of the simulator.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset")]
    EmptyData,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("IDX format error: {0}")]
    Idx(String),

    #[error("m must divide n (n={n}, m={m})")]
    ZonesNotDivisible { n: usize, m: usize },

    #[error("at least 2 zones are required, got {0}")]
    TooFewZones(usize),

    #[error("invalid zone set: {0}")]
    InvalidZoneSet(String),

    #[error("client {0} is not part of the zone set")]
    UnknownClient(usize),

    #[error("no update for client {0}")]
    MissingUpdate(usize),

    #[error("empty queue")]
    EmptyQueue,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
