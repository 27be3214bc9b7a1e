use crate::uarch::{Machine, QueueId};
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("`{mnemonic}` is not in the instruction table for {machine}")]
    UnknownInstruction { mnemonic: String, machine: Machine },
    #[error("queue {0} does not exist on this machine")]
    UnknownQueue(QueueId),
    #[error("timer read latency is not calibrated for {0}")]
    TimerUnavailable(Machine),
    #[error("invalid machine data: {0}")]
    InvalidMachineData(String),
    #[error("invalid instruction data: {0}")]
    InvalidInstructionData(String),
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("`{0}` fails the phase-1 priming requirements")]
    NotACandidate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid placement: {0}")]
    InvalidThreadPlacement(String),
    #[error("lost channel: placement retries exhausted")]
    LostChannelRetriesExhausted,
    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("override `{key}` is not recognized by experiment `{experiment}`")]
    UnknownOverride { experiment: String, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("data parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
