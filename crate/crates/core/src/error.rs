use crate::memory::Pid;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("component {index} out of range for snapshot `{object}` ({len} components)")]
    ComponentOutOfRange {
        object: String,
        index: usize,
        len: usize,
    },

    #[error("unknown snapshot object `{0}`")]
    UnknownObject(String),

    #[error("unknown register `{0}`")]
    UnknownRegister(String),

    #[error("snapshot `{0}` is not atomic; drive its scans with a collector")]
    NotAtomic(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("process {pid} has halted")]
    Halted { pid: Pid },

    #[error("process {pid} is not idle")]
    NotIdle { pid: Pid },

    #[error("process {pid} runs a one-shot protocol and was already invoked")]
    OneShot { pid: Pid },

    #[error("process {pid} has no input for instance {instance}")]
    MissingInput { pid: Pid, instance: u32 },

    #[error("process {pid} has a single thread")]
    SingleThreaded { pid: Pid },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("clone {clone} diverged from {original} at step {step_index}: {detail}")]
    LockstepDivergence {
        original: Pid,
        clone: Pid,
        step_index: usize,
        detail: String,
    },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

pub type Result<T> = std::result::Result<T, Error>;
