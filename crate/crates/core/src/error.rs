use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid room: {0}")]
    Room(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("root {root} is not co-prime with length {n}")]
    NotCoprime { n: usize, root: usize },
    #[error("spectral mask is not unimodular (max deviation {0:e})")]
    MaskNotUnimodular(f64),
    #[error("schedule exhausted: no fresh coordinate for slot {0}")]
    ScheduleExhausted(usize),
    #[error("gain estimate below floor")]
    GainBelowFloor,
    #[error("infeasible geometry pair")]
    Infeasible,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("all-zero channel")]
    ZeroChannel,
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
