//! Reverse-edge discovery: each rank names the ranks it targets and learns
//! which ranks target it, together with a payload per edge.
//!
//! Two algorithms compute the same relation. The dense one counts incoming
//! messages through an allreduce over a communicator-sized array. The
//! consensus one uses synchronous sends and a nonblocking barrier, and never
//! materializes anything proportional to the communicator size.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use super::tags::{self, Phase};
use super::{Communicator, TransportRequest};
use crate::error::{Result, SfError};

fn check_targets(comm: &Communicator, targets: &[(usize, Vec<u8>)]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (t, _) in targets {
        if *t >= comm.size() {
            return Err(SfError::RankOutOfRange {
                rank: *t,
                size: comm.size(),
            });
        }
        if !seen.insert(*t) {
            return Err(SfError::Precondition(format!("rank {t} targeted twice")));
        }
    }
    Ok(())
}

/// Allreduce-based discovery. Returns `(source, payload)` sorted by source.
pub fn discover_dense(
    comm: &Communicator,
    targets: &[(usize, Vec<u8>)],
) -> Result<Vec<(usize, Vec<u8>)>> {
    let checked = check_targets(comm, targets);
    comm.agree(checked)?;
    let mut indicator = vec![0i64; comm.size()];
    for (t, _) in targets {
        indicator[*t] = 1;
    }
    let incoming = comm.allreduce_sum(&indicator)?[comm.rank()] as usize;
    let tag = tags::make(Phase::Discovery, comm.next_collective());
    let mut found = Vec::with_capacity(incoming);
    for (t, payload) in targets {
        if *t == comm.rank() {
            found.push((*t, payload.clone()));
        } else {
            comm.send_raw(*t, tag, payload.clone())?;
        }
    }
    while found.len() < incoming {
        let env = comm.take(None, tag)?;
        found.push((env.src, env.payload));
    }
    found.sort_by_key(|(r, _)| *r);
    Ok(found)
}

/// Nonblocking-consensus discovery (synchronous sends, probe loop, and a
/// barrier entered once all local sends are matched).
pub fn discover_consensus(
    comm: &Communicator,
    targets: &[(usize, Vec<u8>)],
) -> Result<Vec<(usize, Vec<u8>)>> {
    check_targets(comm, targets)?;
    let tag = tags::make(Phase::Discovery, comm.next_collective());
    let mut found = Vec::new();
    let mut sends: Vec<TransportRequest> = Vec::new();
    for (t, payload) in targets {
        if *t == comm.rank() {
            found.push((*t, payload.clone()));
        } else {
            sends.push(comm.post_ssend(*t, tag, payload.clone())?);
        }
    }
    let deadline = Instant::now() + comm.timeout();
    let mut barrier = None;
    loop {
        let generation = comm.mailbox().generation();
        while let Some(env) = comm.try_take(None, tag)? {
            found.push((env.src, env.payload));
        }
        match barrier.as_mut() {
            None => {
                let mut all_matched = true;
                for s in sends.iter_mut() {
                    all_matched &= comm.test(s)?;
                }
                if all_matched {
                    barrier = Some(comm.ibarrier());
                    continue;
                }
            }
            Some(b) => {
                if b.test()? {
                    break;
                }
            }
        }
        if comm.abort_flag().load(std::sync::atomic::Ordering::Relaxed) {
            return Err(SfError::Aborted);
        }
        if Instant::now() >= deadline {
            return Err(SfError::Timeout {
                waited: comm.timeout(),
                what: format!("consensus discovery on rank {}", comm.rank()),
            });
        }
        comm.mailbox()
            .wait_for_arrival(generation, Duration::from_millis(10));
    }
    found.sort_by_key(|(r, _)| *r);
    Ok(found)
}

fn as_targets(set: &BTreeSet<usize>) -> Vec<(usize, Vec<u8>)> {
    set.iter().map(|r| (*r, Vec::new())).collect()
}

/// Ranks that listed this rank in their `targets`, via [`discover_dense`].
pub fn discover_leaf_ranks_dense(
    comm: &Communicator,
    targets: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    Ok(discover_dense(comm, &as_targets(targets))?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// Ranks that listed this rank in their `targets`, via [`discover_consensus`].
pub fn discover_leaf_ranks_consensus(
    comm: &Communicator,
    targets: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    Ok(discover_consensus(comm, &as_targets(targets))?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}
