//! Put-with-signal data path between neighbor ranks.
//!
//! For one direction of traffic, each receiving rank owns a symmetric buffer
//! split into one chunk per sending neighbor, and two arrays of signal slots:
//! `recv_sig[j]` is raised by neighbor `j` after its data landed, and
//! `send_sig[i]` is cleared by neighbor `i` once it consumed what this rank
//! put there. A sender waits for its `send_sig` slot to be clear, marks it
//! busy, puts the data, fences, and raises the receiver's `recv_sig` slot.
//! A receiver waits for all its `recv_sig` slots, copies the chunks out,
//! clears the slots, and clears the matching `send_sig` slot on each sender.

use super::{SignalCondition, SymObject, SymmetricHeap};
use crate::error::{Result, SfError};
use crate::transport::tags::{self, Phase};
use crate::transport::{decode_usizes, encode_usizes, Communicator};

const SIGNAL: usize = 8;

/// Where this rank's data lands on each remote neighbor, in both directions.
///
/// `leaf_*` lists follow the order of the remote leaf ranks of this rank
/// (the ranks holding leaves of its roots); `root_*` lists follow the order
/// of its remote root ranks. Data offsets are in elements, signal entries
/// are slot indices on the neighbor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OffsetTables {
    pub leaf_rank_data: Vec<usize>,
    pub leaf_rank_signal: Vec<usize>,
    pub root_rank_data: Vec<usize>,
    pub root_rank_signal: Vec<usize>,
}

fn prefix(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .scan(0, |acc, c| {
            let at = *acc;
            *acc += c;
            Some(at)
        })
        .collect()
}

/// Collective over `comm`. `root_ranks` and `leaf_ranks` are the remote
/// neighbor lists as `(rank, edge count)`; the two sides of every neighbor
/// pair must agree on the count.
pub fn exchange_offsets(
    comm: &Communicator,
    root_ranks: &[(usize, usize)],
    leaf_ranks: &[(usize, usize)],
) -> Result<OffsetTables> {
    let seq = comm.next_collective();
    let to_leaf_rank = tags::make(Phase::Setup, seq << 1);
    let to_root_rank = tags::make(Phase::Setup, (seq << 1) | 1);
    let leaf_counts: Vec<usize> = leaf_ranks.iter().map(|(_, n)| *n).collect();
    let root_counts: Vec<usize> = root_ranks.iter().map(|(_, n)| *n).collect();
    // A leaf rank writes reduce data into our root-side buffer; a root rank
    // writes broadcast data into our leaf-side buffer.
    for (i, ((rank, n), off)) in leaf_ranks.iter().zip(prefix(&leaf_counts)).enumerate() {
        comm.send_raw(*rank, to_leaf_rank, encode_usizes(&[off, i, *n]))?;
    }
    for (j, ((rank, n), off)) in root_ranks.iter().zip(prefix(&root_counts)).enumerate() {
        comm.send_raw(*rank, to_root_rank, encode_usizes(&[off, j, *n]))?;
    }
    let mut tables = OffsetTables::default();
    let mut inconsistent = None;
    for (rank, n) in leaf_ranks {
        let v = decode_usizes(&comm.recv_raw(*rank, to_root_rank)?);
        if v[2] != *n {
            inconsistent.get_or_insert(*rank);
        }
        tables.leaf_rank_data.push(v[0]);
        tables.leaf_rank_signal.push(v[1]);
    }
    for (rank, n) in root_ranks {
        let v = decode_usizes(&comm.recv_raw(*rank, to_leaf_rank)?);
        if v[2] != *n {
            inconsistent.get_or_insert(*rank);
        }
        tables.root_rank_data.push(v[0]);
        tables.root_rank_signal.push(v[1]);
    }
    let local = match inconsistent {
        Some(rank) => Err(SfError::Precondition(format!(
            "edge counts disagree between ranks {} and {rank}",
            comm.rank()
        ))),
        None => Ok(tables),
    };
    comm.agree(local)
}

/// One direction of traffic as seen from one rank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowLayout {
    pub send_peers: Vec<usize>,
    /// Element offset of this rank's chunk in each send peer's buffer.
    pub remote_data_offset: Vec<usize>,
    /// Index of this rank in each send peer's `recv_sig` array.
    pub remote_signal_index: Vec<usize>,
    pub recv_peers: Vec<usize>,
    pub local_chunk_offset: Vec<usize>,
    pub local_chunk_len: Vec<usize>,
    /// Index of this rank in each receive peer's `send_sig` array.
    pub remote_sendsig_index: Vec<usize>,
}

impl FlowLayout {
    /// Root-to-leaf traffic: roots send to their remote leaf ranks.
    pub fn root_to_leaf(
        tables: &OffsetTables,
        root_ranks: &[(usize, usize)],
        leaf_ranks: &[(usize, usize)],
    ) -> Self {
        Self::build(
            leaf_ranks,
            &tables.leaf_rank_data,
            &tables.leaf_rank_signal,
            root_ranks,
            &tables.root_rank_signal,
        )
    }

    /// Leaf-to-root traffic: leaves send to their remote root ranks.
    pub fn leaf_to_root(
        tables: &OffsetTables,
        root_ranks: &[(usize, usize)],
        leaf_ranks: &[(usize, usize)],
    ) -> Self {
        Self::build(
            root_ranks,
            &tables.root_rank_data,
            &tables.root_rank_signal,
            leaf_ranks,
            &tables.leaf_rank_signal,
        )
    }

    fn build(
        senders_to: &[(usize, usize)],
        data: &[usize],
        signal: &[usize],
        receive_from: &[(usize, usize)],
        sendsig: &[usize],
    ) -> Self {
        let lens: Vec<usize> = receive_from.iter().map(|(_, n)| *n).collect();
        FlowLayout {
            send_peers: senders_to.iter().map(|(r, _)| *r).collect(),
            remote_data_offset: data.to_vec(),
            remote_signal_index: signal.to_vec(),
            recv_peers: receive_from.iter().map(|(r, _)| *r).collect(),
            local_chunk_offset: prefix(&lens),
            local_chunk_len: lens,
            remote_sendsig_index: sendsig.to_vec(),
        }
    }

    pub fn recv_elements(&self) -> usize {
        self.local_chunk_len.iter().sum()
    }
}

/// Symmetric objects backing one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowResources {
    pub buf: SymObject,
    pub recv_sig: SymObject,
    pub send_sig: SymObject,
    pub unit_bytes: usize,
}

impl FlowResources {
    /// Collective: sizes are maxima over ranks, so every rank must call this
    /// for the same flows in the same order.
    pub fn allocate(comm: &Communicator, layout: &FlowLayout, unit_bytes: usize) -> Result<Self> {
        let heap = comm
            .heap()
            .ok_or_else(|| SfError::Precondition("communicator has no symmetric heap".into()))?;
        Ok(FlowResources {
            buf: heap.collective_alloc(comm, layout.recv_elements() * unit_bytes)?,
            recv_sig: heap.collective_alloc(comm, layout.recv_peers.len() * SIGNAL)?,
            send_sig: heap.collective_alloc(comm, layout.send_peers.len() * SIGNAL)?,
            unit_bytes,
        })
    }

    fn recv_slot(&self, j: usize) -> usize {
        self.recv_sig.offset + j * SIGNAL
    }

    fn send_slot(&self, i: usize) -> usize {
        self.send_sig.offset + i * SIGNAL
    }
}

/// Sender half: `payloads[i]` goes to `layout.send_peers[i]`.
pub fn put_phase(
    heap: &SymmetricHeap,
    layout: &FlowLayout,
    res: &FlowResources,
    payloads: &[Vec<u8>],
) -> Result<()> {
    if payloads.len() != layout.send_peers.len() {
        return Err(SfError::LengthMismatch {
            what: "one-sided payloads",
            expected: layout.send_peers.len(),
            got: payloads.len(),
        });
    }
    for (i, (&peer, data)) in layout.send_peers.iter().zip(payloads).enumerate() {
        // Mark the slot busy before the data goes out, so the receiver's
        // clear can only ever follow it.
        let slot = res.send_slot(i);
        heap.wait_until_all(&[slot], SignalCondition::Equal(0))?;
        heap.signal_set_local(slot, 1)?;
        let at = res.buf.offset + layout.remote_data_offset[i] * res.unit_bytes;
        heap.put_nbi(peer, at, data)?;
        heap.fence(Some(peer))?;
        heap.signal_set(peer, res.recv_slot(layout.remote_signal_index[i]), 1)?;
    }
    Ok(())
}

/// Receiver half: returns the chunk from each `layout.recv_peers[j]`.
pub fn receive_phase(
    heap: &SymmetricHeap,
    layout: &FlowLayout,
    res: &FlowResources,
) -> Result<Vec<Vec<u8>>> {
    let slots: Vec<usize> = (0..layout.recv_peers.len()).map(|j| res.recv_slot(j)).collect();
    heap.wait_until_all(&slots, SignalCondition::NotEqual(0))?;
    let mut out = Vec::with_capacity(slots.len());
    for (j, &peer) in layout.recv_peers.iter().enumerate() {
        let at = res.buf.offset + layout.local_chunk_offset[j] * res.unit_bytes;
        out.push(heap.read_local(at, layout.local_chunk_len[j] * res.unit_bytes)?);
        heap.signal_set_local(slots[j], 0)?;
        heap.signal_set(peer, res.send_slot(layout.remote_sendsig_index[j]), 0)?;
    }
    Ok(out)
}
