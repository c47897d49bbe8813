//! Tag layout. The top byte names the library phase, bits 52..56 carry
//! flags, and the low 52 bits identify the operation within the phase.

use crate::error::{Result, SfError};

const PHASE_SHIFT: u32 = 56;
pub const SYNC_FLAG: u64 = 1 << 52;
pub const REPLY_FLAG: u64 = 1 << 53;
pub const PAYLOAD_BITS: u32 = 52;
const PAYLOAD_MASK: u64 = (1 << PAYLOAD_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    User = 0,
    Collective = 1,
    Discovery = 2,
    Setup = 3,
    Data = 4,
    Ack = 5,
    Barrier = 6,
    Control = 7,
}

pub fn make(phase: Phase, payload: u64) -> u64 {
    ((phase as u64) << PHASE_SHIFT) | (payload & PAYLOAD_MASK)
}

pub fn phase_bits(tag: u64) -> u64 {
    tag >> PHASE_SHIFT
}

pub fn user(tag: u64) -> Result<u64> {
    if tag > PAYLOAD_MASK {
        return Err(SfError::Precondition(format!(
            "user tag {tag:#x} exceeds {PAYLOAD_BITS} bits"
        )));
    }
    Ok(make(Phase::User, tag))
}

/// Tag of a data message for operation `seq` on star forest `sf_id`.
pub fn data(sf_id: u64, seq: u64) -> u64 {
    make(Phase::Data, ((sf_id & 0xF_FFFF) << 32) | (seq & 0xFFFF_FFFF))
}

/// Whether an arrived tag satisfies a wanted tag; the sync flag is ignored.
pub fn matches(arrived: u64, wanted: u64) -> bool {
    arrived & !SYNC_FLAG == wanted & !SYNC_FLAG
}

/// Tag of the acknowledgement for a synchronous send with `tag`.
pub fn ack_for(tag: u64) -> u64 {
    let low = tag & ((1 << 44) - 1);
    make(Phase::Ack, (phase_bits(tag) << 44) | low)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_do_not_collide() {
        assert_ne!(make(Phase::Data, 5), make(Phase::Collective, 5));
        assert_ne!(ack_for(make(Phase::User, 5)), ack_for(make(Phase::Discovery, 5)));
        assert!(matches(make(Phase::User, 3) | SYNC_FLAG, make(Phase::User, 3)));
        assert!(!matches(data(1, 2), data(2, 2)));
    }
}
