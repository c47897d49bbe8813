//! Two-sided message transport between ranks.
//!
//! A [`Communicator`] is one rank's endpoint. Messages are eagerly delivered
//! into the destination's mailbox and matched on (source, tag) in arrival
//! order. Backends differ only in how bytes reach the mailbox: directly
//! through shared memory (`threads`, `onesided`) or over local TCP
//! (`sockets`). The `onesided` backend additionally owns a symmetric heap used
//! by the put/signal data path.

mod discovery;
mod mailbox;
pub mod sockets;
pub mod tags;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub use discovery::{
    discover_consensus, discover_dense, discover_leaf_ranks_consensus, discover_leaf_ranks_dense,
};
pub(crate) use mailbox::{AbortFlag, Envelope, Mailbox};
use tags::Phase;

use crate::error::{Result, SfError};
use crate::symheap::{SymmetricHeap, SymmetricWorld};

/// Default point-to-point wait bound.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Communicator size above which setup defaults to the consensus discovery.
pub const DEFAULT_CONSENSUS_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Threads,
    Sockets,
    OneSided,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Threads => "threads",
            Backend::Sockets => "sockets",
            Backend::OneSided => "onesided",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = SfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "threads" => Ok(Backend::Threads),
            "sockets" => Ok(Backend::Sockets),
            "onesided" => Ok(Backend::OneSided),
            other => Err(SfError::Precondition(format!("unknown transport {other:?}"))),
        }
    }
}

/// Moves bytes from one rank into another rank's mailbox.
pub(crate) trait Link: Send + Sync {
    fn send(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<()>;
}

struct SharedMemoryLink {
    rank: usize,
    boxes: Arc<Vec<Arc<Mailbox>>>,
}

impl Link for SharedMemoryLink {
    fn send(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<()> {
        self.boxes[dest].push(Envelope {
            src: self.rank,
            tag,
            payload,
        });
        Ok(())
    }
}

/// Tunables shared by every rank of a world.
#[derive(Debug, Clone)]
pub struct CommOptions {
    pub timeout: Duration,
    pub consensus_threshold: usize,
}

impl Default for CommOptions {
    fn default() -> Self {
        CommOptions {
            timeout: DEFAULT_TIMEOUT,
            consensus_threshold: DEFAULT_CONSENSUS_THRESHOLD,
        }
    }
}

struct CommInner {
    rank: usize,
    size: usize,
    backend: Backend,
    world_id: u64,
    link: Box<dyn Link>,
    mailbox: Arc<Mailbox>,
    abort: AbortFlag,
    options: CommOptions,
    collective_seq: AtomicU64,
    sf_seq: AtomicU64,
    heap: Option<SymmetricHeap>,
}

/// One rank's view of a group of ranks.
#[derive(Clone)]
pub struct Communicator {
    inner: Arc<CommInner>,
}

impl fmt::Debug for Communicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.inner.rank)
            .field("size", &self.inner.size)
            .field("backend", &self.inner.backend)
            .finish()
    }
}

static NEXT_WORLD: AtomicU64 = AtomicU64::new(1);

impl Communicator {
    /// Creates `n` connected in-process endpoints.
    pub fn threads_world(n: usize, options: CommOptions) -> Vec<Communicator> {
        Self::shared_memory_world(n, options, Backend::Threads, None, Arc::default())
    }

    /// Like [`threads_world`](Self::threads_world), with a symmetric heap per
    /// rank for the one-sided data path.
    pub fn onesided_world(
        n: usize,
        options: CommOptions,
        world: Arc<SymmetricWorld>,
    ) -> Vec<Communicator> {
        Self::shared_memory_world(n, options, Backend::OneSided, Some(world), Arc::default())
    }

    pub(crate) fn shared_memory_world(
        n: usize,
        options: CommOptions,
        backend: Backend,
        heap_world: Option<Arc<SymmetricWorld>>,
        abort: AbortFlag,
    ) -> Vec<Communicator> {
        assert!(n >= 1, "a communicator needs at least one rank");
        let world_id = NEXT_WORLD.fetch_add(1, Ordering::Relaxed);
        let boxes: Arc<Vec<Arc<Mailbox>>> = Arc::new((0..n).map(|_| Arc::default()).collect());
        (0..n)
            .map(|rank| {
                let heap = heap_world
                    .as_ref()
                    .map(|w| SymmetricHeap::new(w.clone(), rank, abort.clone(), options.timeout));
                Communicator::from_parts(
                    rank,
                    n,
                    backend,
                    world_id,
                    Box::new(SharedMemoryLink {
                        rank,
                        boxes: boxes.clone(),
                    }),
                    boxes[rank].clone(),
                    abort.clone(),
                    options.clone(),
                    heap,
                )
            })
            .collect()
    }

    /// A single-rank communicator.
    pub fn solo() -> Communicator {
        Self::threads_world(1, CommOptions::default()).remove(0)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        rank: usize,
        size: usize,
        backend: Backend,
        world_id: u64,
        link: Box<dyn Link>,
        mailbox: Arc<Mailbox>,
        abort: AbortFlag,
        options: CommOptions,
        heap: Option<SymmetricHeap>,
    ) -> Communicator {
        Communicator {
            inner: Arc::new(CommInner {
                rank,
                size,
                backend,
                world_id,
                link,
                mailbox,
                abort,
                options,
                collective_seq: AtomicU64::new(0),
                sf_seq: AtomicU64::new(0),
                heap,
            }),
        }
    }

    pub fn rank(&self) -> usize {
        self.inner.rank
    }

    pub fn size(&self) -> usize {
        self.inner.size
    }

    pub fn backend(&self) -> Backend {
        self.inner.backend
    }

    pub fn timeout(&self) -> Duration {
        self.inner.options.timeout
    }

    pub fn consensus_threshold(&self) -> usize {
        self.inner.options.consensus_threshold
    }

    /// Identity of the group; endpoints created together share it.
    pub fn world_id(&self) -> u64 {
        self.inner.world_id
    }

    pub fn same_group(&self, other: &Communicator) -> bool {
        self.world_id() == other.world_id()
    }

    pub fn heap(&self) -> Option<&SymmetricHeap> {
        self.inner.heap.as_ref()
    }

    pub(crate) fn abort_flag(&self) -> &AtomicBool {
        &self.inner.abort
    }

    pub(crate) fn mailbox(&self) -> &Mailbox {
        &self.inner.mailbox
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.size() {
            return Err(SfError::RankOutOfRange {
                rank: peer,
                size: self.size(),
            });
        }
        Ok(())
    }

    /// Next per-communicator collective sequence number. Every rank calls
    /// collectives in the same order, so the numbers agree.
    pub(crate) fn next_collective(&self) -> u64 {
        self.inner.collective_seq.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn next_sf_id(&self) -> u64 {
        self.inner.sf_seq.fetch_add(1, Ordering::Relaxed)
    }

    // ---- point to point -------------------------------------------------

    pub(crate) fn send_raw(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<()> {
        self.check_peer(dest)?;
        self.inner.link.send(dest, tag, payload)
    }

    fn take(&self, src: Option<usize>, tag: u64) -> Result<Envelope> {
        let env = self.inner.mailbox.take(
            |e| src.is_none_or(|s| e.src == s) && tags::matches(e.tag, tag),
            self.timeout(),
            &self.inner.abort,
            || format!("message from {src:?} with tag {tag:#x} on rank {}", self.rank()),
        )?;
        self.acknowledge(&env)?;
        Ok(env)
    }

    pub(crate) fn try_take(&self, src: Option<usize>, tag: u64) -> Result<Option<Envelope>> {
        match self
            .inner
            .mailbox
            .try_take(|e| src.is_none_or(|s| e.src == s) && tags::matches(e.tag, tag))
        {
            Some(env) => {
                self.acknowledge(&env)?;
                Ok(Some(env))
            }
            None => Ok(None),
        }
    }

    fn acknowledge(&self, env: &Envelope) -> Result<()> {
        if env.tag & tags::SYNC_FLAG != 0 {
            self.send_raw(env.src, tags::ack_for(env.tag), Vec::new())?;
        }
        Ok(())
    }

    pub(crate) fn recv_raw(&self, src: usize, tag: u64) -> Result<Vec<u8>> {
        Ok(self.take(Some(src), tag)?.payload)
    }

    pub(crate) fn post_send(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<TransportRequest> {
        let len = payload.len();
        self.send_raw(dest, tag, payload)?;
        Ok(TransportRequest {
            direction: Direction::Send,
            peer: dest,
            tag,
            len: Some(len),
            state: RequestState::Complete(None),
        })
    }

    pub(crate) fn post_ssend(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<TransportRequest> {
        let len = payload.len();
        if dest == self.rank() {
            return Err(SfError::Precondition(
                "synchronous send to self would never be matched by a blocked sender".into(),
            ));
        }
        self.send_raw(dest, tag | tags::SYNC_FLAG, payload)?;
        Ok(TransportRequest {
            direction: Direction::Send,
            peer: dest,
            tag,
            len: Some(len),
            state: RequestState::AwaitingAck,
        })
    }

    pub(crate) fn post_recv(&self, src: usize, tag: u64, expected_len: Option<usize>) -> Result<TransportRequest> {
        self.check_peer(src)?;
        Ok(TransportRequest {
            direction: Direction::Recv,
            peer: src,
            tag,
            len: expected_len,
            state: RequestState::Pending,
        })
    }

    /// Nonblocking buffered send with a user tag (below 2^52).
    pub fn isend(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<TransportRequest> {
        self.post_send(dest, tags::user(tag)?, payload)
    }

    /// Nonblocking synchronous send: completes once the receiver matched it.
    pub fn issend(&self, dest: usize, tag: u64, payload: Vec<u8>) -> Result<TransportRequest> {
        self.post_ssend(dest, tags::user(tag)?, payload)
    }

    /// Posts a receive. `expected_len`, when given, is checked on arrival.
    pub fn irecv(&self, src: usize, tag: u64, expected_len: Option<usize>) -> Result<TransportRequest> {
        self.post_recv(src, tags::user(tag)?, expected_len)
    }

    /// Completes a request if possible without blocking.
    pub fn test(&self, req: &mut TransportRequest) -> Result<bool> {
        match req.state {
            RequestState::Complete(_) => Ok(true),
            RequestState::Pending => match self.try_take(Some(req.peer), req.tag)? {
                Some(env) => {
                    req.complete_recv(env.payload)?;
                    Ok(true)
                }
                None => Ok(false),
            },
            RequestState::AwaitingAck => {
                match self.try_take(Some(req.peer), tags::ack_for(req.tag))? {
                    Some(_) => {
                        req.state = RequestState::Complete(None);
                        Ok(true)
                    }
                    None => Ok(false),
                }
            }
        }
    }

    /// Blocks until the request completes; receives yield their payload.
    pub fn wait(&self, mut req: TransportRequest) -> Result<Option<Vec<u8>>> {
        match req.state {
            RequestState::Complete(data) => Ok(data),
            RequestState::Pending => {
                let env = self.take(Some(req.peer), req.tag)?;
                req.complete_recv(env.payload)?;
                match req.state {
                    RequestState::Complete(data) => Ok(data),
                    _ => unreachable!(),
                }
            }
            RequestState::AwaitingAck => {
                self.take(Some(req.peer), tags::ack_for(req.tag))?;
                Ok(None)
            }
        }
    }

    pub fn wait_all(&self, reqs: Vec<TransportRequest>) -> Result<Vec<Option<Vec<u8>>>> {
        reqs.into_iter().map(|r| self.wait(r)).collect()
    }

    /// Source and length of the oldest pending user message with `tag`.
    pub fn probe(&self, tag: u64) -> Result<Option<(usize, usize)>> {
        let raw = tags::user(tag)?;
        Ok(self
            .inner
            .mailbox
            .probe(|e| tags::matches(e.tag, raw))
            .map(|(src, _, len)| (src, len)))
    }

    // ---- collectives ----------------------------------------------------

    fn allreduce_with(&self, values: &[i64], f: fn(i64, i64) -> i64) -> Result<Vec<i64>> {
        let tag = tags::make(Phase::Collective, self.next_collective());
        if self.rank() == 0 {
            let mut acc = values.to_vec();
            let mut bad = None;
            for r in 1..self.size() {
                let other = decode_i64s(&self.recv_raw(r, tag)?);
                if other.len() != acc.len() {
                    bad.get_or_insert((r, other.len()));
                    continue;
                }
                acc.iter_mut().zip(other).for_each(|(a, b)| *a = f(*a, b));
            }
            let reply = match bad {
                None => {
                    let mut v = vec![0u8];
                    v.extend(encode_i64s(&acc));
                    v
                }
                Some(_) => vec![1u8],
            };
            for r in 1..self.size() {
                self.send_raw(r, tag, reply.clone())?;
            }
            match bad {
                None => Ok(acc),
                Some((_, got)) => Err(SfError::LengthMismatch {
                    what: "allreduce contribution",
                    expected: values.len(),
                    got,
                }),
            }
        } else {
            self.send_raw(0, tag, encode_i64s(values))?;
            let reply = self.recv_raw(0, tag)?;
            if reply.first() == Some(&0) {
                let out = decode_i64s(&reply[1..]);
                Ok(out)
            } else {
                Err(SfError::LengthMismatch {
                    what: "allreduce contribution",
                    expected: values.len(),
                    got: usize::MAX,
                })
            }
        }
    }

    /// Elementwise maximum across ranks.
    pub fn allreduce_max(&self, values: &[i64]) -> Result<Vec<i64>> {
        self.allreduce_with(values, i64::max)
    }

    pub fn allreduce_min(&self, values: &[i64]) -> Result<Vec<i64>> {
        self.allreduce_with(values, i64::min)
    }

    pub fn allreduce_sum(&self, values: &[i64]) -> Result<Vec<i64>> {
        self.allreduce_with(values, |a, b| a.wrapping_add(b))
    }

    pub fn barrier(&self) -> Result<()> {
        self.allreduce_with(&[], |a, _| a).map(|_| ())
    }

    /// Every rank's payload, indexed by rank.
    pub fn allgather(&self, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let tag = tags::make(Phase::Collective, self.next_collective());
        if self.rank() == 0 {
            let mut all = vec![payload];
            for r in 1..self.size() {
                all.push(self.recv_raw(r, tag)?);
            }
            let mut flat = Vec::new();
            for p in &all {
                flat.extend((p.len() as u64).to_le_bytes());
                flat.extend_from_slice(p);
            }
            for r in 1..self.size() {
                self.send_raw(r, tag, flat.clone())?;
            }
            Ok(all)
        } else {
            self.send_raw(0, tag, payload)?;
            let flat = self.recv_raw(0, tag)?;
            let mut out = Vec::with_capacity(self.size());
            let mut pos = 0;
            while pos < flat.len() {
                let len = u64::from_le_bytes(flat[pos..pos + 8].try_into().unwrap()) as usize;
                pos += 8;
                out.push(flat[pos..pos + len].to_vec());
                pos += len;
            }
            Ok(out)
        }
    }

    /// Turns a local outcome into a collective one: if any rank failed, every
    /// rank returns an error (the failing ranks keep their own).
    pub fn agree<T>(&self, local: Result<T>) -> Result<T> {
        let flag = match &local {
            Ok(_) => 0,
            Err(_) => self.rank() as i64 + 1,
        };
        let worst = self.allreduce_max(&[flag])?[0];
        match local {
            Err(e) => Err(e),
            Ok(_) if worst > 0 => Err(SfError::RemoteFailure(worst as usize - 1)),
            Ok(v) => Ok(v),
        }
    }

    /// Starts a nonblocking barrier.
    pub fn ibarrier(&self) -> IBarrier {
        IBarrier {
            comm: self.clone(),
            base: self.next_collective(),
            distance: 1,
            round: 0,
            sent: false,
        }
    }
}

/// Dissemination barrier advanced by [`IBarrier::test`].
pub struct IBarrier {
    comm: Communicator,
    base: u64,
    distance: usize,
    round: u64,
    sent: bool,
}

impl IBarrier {
    fn tag(&self) -> u64 {
        tags::make(Phase::Barrier, (self.base << 8) | self.round)
    }

    pub fn test(&mut self) -> Result<bool> {
        let n = self.comm.size();
        let me = self.comm.rank();
        while self.distance < n {
            if !self.sent {
                self.comm
                    .send_raw((me + self.distance) % n, self.tag(), Vec::new())?;
                self.sent = true;
            }
            let from = (me + n - self.distance) % n;
            if self.comm.try_take(Some(from), self.tag())?.is_none() {
                return Ok(false);
            }
            self.distance *= 2;
            self.round += 1;
            self.sent = false;
        }
        Ok(true)
    }

    pub fn wait(mut self) -> Result<()> {
        let deadline = Instant::now() + self.comm.timeout();
        loop {
            let gen = self.comm.mailbox().generation();
            if self.test()? {
                return Ok(());
            }
            if self.comm.abort_flag().load(Ordering::Relaxed) {
                return Err(SfError::Aborted);
            }
            if Instant::now() >= deadline {
                return Err(SfError::Timeout {
                    waited: self.comm.timeout(),
                    what: "barrier".into(),
                });
            }
            self.comm
                .mailbox()
                .wait_for_arrival(gen, Duration::from_millis(20));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

#[derive(Debug)]
enum RequestState {
    Pending,
    AwaitingAck,
    Complete(Option<Vec<u8>>),
}

/// An in-flight send or receive.
#[derive(Debug)]
pub struct TransportRequest {
    direction: Direction,
    peer: usize,
    tag: u64,
    len: Option<usize>,
    state: RequestState,
}

impl TransportRequest {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.state, RequestState::Complete(_))
    }

    fn complete_recv(&mut self, payload: Vec<u8>) -> Result<()> {
        if let Some(expected) = self.len {
            if expected != payload.len() {
                return Err(SfError::MessageSize {
                    peer: self.peer,
                    tag: self.tag,
                    expected,
                    got: payload.len(),
                });
            }
        }
        self.state = RequestState::Complete(Some(payload));
        Ok(())
    }
}

pub(crate) fn encode_i64s(v: &[i64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn decode_i64s(b: &[u8]) -> Vec<i64> {
    b.chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) fn encode_usizes(v: &[usize]) -> Vec<u8> {
    v.iter().flat_map(|x| (*x as u64).to_le_bytes()).collect()
}

pub(crate) fn decode_usizes(b: &[u8]) -> Vec<usize> {
    b.chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn on_ranks<R: Send + 'static>(
        n: usize,
        f: impl Fn(Communicator) -> R + Send + Sync + 'static,
    ) -> Vec<R> {
        let f = Arc::new(f);
        let opts = CommOptions {
            timeout: Duration::from_secs(5),
            ..Default::default()
        };
        Communicator::threads_world(n, opts)
            .into_iter()
            .map(|c| {
                let f = f.clone();
                thread::spawn(move || f(c))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect()
    }

    #[test]
    fn loopback_integrity() {
        let out = on_ranks(2, |c| {
            if c.rank() == 0 {
                let r = c.isend(1, 7, vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
                c.wait(r).unwrap();
                None
            } else {
                let r = c.irecv(0, 7, Some(8)).unwrap();
                c.wait(r).unwrap()
            }
        });
        assert_eq!(out[1], Some(vec![1, 2, 3, 4, 5, 6, 7, 8]));
    }

    #[test]
    fn same_tag_messages_do_not_overtake() {
        let out = on_ranks(2, |c| {
            if c.rank() == 0 {
                for i in 0..50u8 {
                    c.isend(1, 3, vec![i]).unwrap();
                }
                vec![]
            } else {
                let reqs: Vec<_> = (0..50).map(|_| c.irecv(0, 3, None).unwrap()).collect();
                c.wait_all(reqs)
                    .unwrap()
                    .into_iter()
                    .map(|p| p.unwrap()[0])
                    .collect()
            }
        });
        assert_eq!(out[1], (0..50u8).collect::<Vec<_>>());
    }

    #[test]
    fn unmatched_receive_times_out() {
        let c = Communicator::threads_world(
            2,
            CommOptions {
                timeout: Duration::from_millis(100),
                ..Default::default()
            },
        )
        .remove(1);
        let r = c.irecv(0, 1, None).unwrap();
        assert!(matches!(c.wait(r), Err(SfError::Timeout { .. })));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let out = on_ranks(2, |c| {
            if c.rank() == 0 {
                c.isend(1, 1, vec![0; 4]).unwrap();
                true
            } else {
                let r = c.irecv(0, 1, Some(8)).unwrap();
                matches!(c.wait(r), Err(SfError::MessageSize { got: 4, .. }))
            }
        });
        assert!(out[1]);
    }

    #[test]
    fn allreduce_examples() {
        let out = on_ranks(3, |c| c.allreduce_max(&[[1, 5, 3][c.rank()]]).unwrap());
        assert!(out.iter().all(|v| v == &vec![5]));
        let out = on_ranks(2, |c| {
            let mine = if c.rank() == 0 { [1, 2] } else { [3, 4] };
            c.allreduce_sum(&mine).unwrap()
        });
        assert!(out.iter().all(|v| v == &vec![4, 6]));
        assert_eq!(Communicator::solo().allreduce_sum(&[7, 8]).unwrap(), vec![7, 8]);
    }

    #[test]
    fn allreduce_length_mismatch() {
        let out = on_ranks(2, |c| {
            let v = vec![1; c.rank() + 1];
            c.allreduce_max(&v).is_err()
        });
        assert!(out.iter().all(|e| *e));
    }

    #[test]
    fn ssend_completes_after_match() {
        let out = on_ranks(2, |c| {
            if c.rank() == 0 {
                let mut r = c.issend(1, 9, vec![42]).unwrap();
                // rank 1 waits for the go signal before receiving
                assert!(!c.test(&mut r).unwrap());
                c.isend(1, 10, vec![]).unwrap();
                c.wait(r).unwrap();
                0
            } else {
                c.wait(c.irecv(0, 10, None).unwrap()).unwrap();
                c.wait(c.irecv(0, 9, None).unwrap()).unwrap().unwrap()[0]
            }
        });
        assert_eq!(out[1], 42);
    }

    #[test]
    fn ibarrier_and_allgather() {
        let out = on_ranks(5, |c| {
            c.ibarrier().wait().unwrap();
            c.allgather(vec![c.rank() as u8; c.rank()]).unwrap()
        });
        for v in out {
            assert_eq!(v.len(), 5);
            for (r, p) in v.iter().enumerate() {
                assert_eq!(p, &vec![r as u8; r]);
            }
        }
    }

    #[test]
    fn user_tags_cannot_enter_reserved_space() {
        let c = Communicator::solo();
        assert!(c.isend(0, 1 << 60, vec![]).is_err());
    }
}
