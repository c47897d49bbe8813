//! Error type shared by every module of the crate.

use std::time::Duration;

use crate::scalar::{ElementKind, ReduceOp};
use crate::sfgraph::SfState;

#[derive(Debug, thiserror::Error)]
pub enum SfError {
    #[error("leaf index {0} is connected more than once")]
    DuplicateLeaf(usize),

    #[error("{what}: length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}: buffer holds {got} elements, at least {needed} required")]
    BufferTooSmall {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("rank {rank} out of range for communicator of size {size}")]
    RankOutOfRange { rank: usize, size: usize },

    #[error("root offset {offset} out of range on rank {rank}, which owns {nroots} roots")]
    RootOffsetOutOfRange {
        rank: usize,
        offset: usize,
        nroots: usize,
    },

    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("star forest is {found:?}, operation requires {expected:?}")]
    InvalidState { found: SfState, expected: SfState },

    #[error("reduction {op:?} is not defined for element kind {kind:?}")]
    IncompatibleOp { op: ReduceOp, kind: ElementKind },

    #[error("unit declares {declared:?} elements but the data is {actual:?}")]
    UnitKindMismatch {
        declared: ElementKind,
        actual: ElementKind,
    },

    #[error("blocklen must be at least 1")]
    ZeroBlocklen,

    #[error("timed out after {waited:?} waiting for {what}")]
    Timeout { waited: Duration, what: String },

    #[error("run aborted because another rank failed")]
    Aborted,

    #[error("message from rank {peer} tag {tag:#x}: {got} bytes, expected {expected}")]
    MessageSize {
        peer: usize,
        tag: u64,
        expected: usize,
        got: usize,
    },

    #[error("transport: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("symmetric heap exhausted: requested {requested} bytes, {available} available")]
    HeapExhausted { requested: usize, available: usize },

    #[error("symmetric access [{offset}, {offset}+{len}) is not inside an allocated object")]
    SymmetricRange { offset: usize, len: usize },

    #[error("symmetric registry diverged across ranks")]
    AsymmetricHeap,

    #[error("buffers were modified between begin and end")]
    BufferMutated,

    #[error("{0}")]
    Precondition(String),

    #[error("collective operation failed on rank {0}")]
    RemoteFailure(usize),

    #[error("data integrity check failed: {0}")]
    Integrity(String),

    #[error("multi-rank run failed: {0}")]
    Run(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SfError>;
