use thiserror::Error;

use crate::chunk::{ProcessorId, Tick};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmError {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// An internal ordering invariant of the tick scheduler was violated.
    #[error("scheduler invariant violated at tick {tick}: {detail}")]
    Scheduler { tick: Tick, detail: String },

    #[error("no link between processors {from} and {to}")]
    NoLink { from: ProcessorId, to: ProcessorId },

    #[error("unknown sketch `{0}`")]
    UnknownSketch(String),

    #[error("tree height {height} exceeds the exhaustive oracle limit of {limit}")]
    TooLarge { height: u32, limit: u32 },

    #[error("run complete: lifetime of {0} ticks reached")]
    RunComplete(Tick),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CtmError {
    fn from(e: std::io::Error) -> Self {
        CtmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CtmError>;
