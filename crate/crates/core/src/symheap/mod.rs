//! Emulated symmetric heap with asynchronous puts, fences, and signals.
//!
//! Every rank owns one byte region. Objects are allocated collectively so
//! that each one sits at the same offset, with the same size, on every rank;
//! a remote location is therefore just `(rank, offset)`.
//!
//! Remote puts are queued per destination and delivered by a worker thread.
//! Puts issued between two fences may land in any order (and, with delay
//! injection, after arbitrary pauses); a fence orders everything before it
//! ahead of everything after it for that destination. Signals are 64-bit
//! slots written through the same queues, so "put, fence, signal" guarantees
//! the data is visible once the signal is.

mod protocol;

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use protocol::{
    exchange_offsets, receive_phase, put_phase, FlowLayout, FlowResources, OffsetTables,
};

use crate::error::{Result, SfError};
use crate::transport::{AbortFlag, Communicator};

const ALIGN: usize = 8;
const POLL_SLICE: Duration = Duration::from_millis(20);

/// Default per-rank heap limit.
pub const DEFAULT_CAPACITY: usize = 1 << 30;

/// Adversarial scheduling of remote puts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DelayConfig {
    /// Upper bound of the random pause before each delivery; zero disables
    /// pauses.
    pub max_delay: Duration,
    /// Deliver the puts of one fence epoch in a random order.
    pub reorder: bool,
    pub seed: u64,
}

impl DelayConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn random(max_delay: Duration, seed: u64) -> Self {
        DelayConfig {
            max_delay,
            reorder: true,
            seed,
        }
    }

    fn enabled(&self) -> bool {
        !self.max_delay.is_zero()
    }
}

#[derive(Default)]
struct HeapRegion {
    bytes: Mutex<Vec<u8>>,
    changed: Condvar,
}

impl HeapRegion {
    fn write(&self, offset: usize, data: &[u8]) {
        let mut b = self.bytes.lock().unwrap();
        b[offset..offset + data.len()].copy_from_slice(data);
        self.changed.notify_all();
    }
}

/// The heaps of all ranks of one in-process world.
pub struct SymmetricWorld {
    regions: Vec<Arc<HeapRegion>>,
    capacity: usize,
    delays: DelayConfig,
    direct_puts: bool,
}

impl SymmetricWorld {
    pub fn new(nranks: usize, capacity: usize, delays: DelayConfig) -> Arc<Self> {
        Arc::new(SymmetricWorld {
            regions: (0..nranks).map(|_| Arc::default()).collect(),
            capacity,
            delays,
            direct_puts: false,
        })
    }

    /// All peers are treated as locally accessible: puts are immediate copies
    /// and never reordered or delayed.
    pub fn with_direct_puts(nranks: usize, capacity: usize) -> Arc<Self> {
        Arc::new(SymmetricWorld {
            regions: (0..nranks).map(|_| Arc::default()).collect(),
            capacity,
            delays: DelayConfig::none(),
            direct_puts: true,
        })
    }

    pub fn nranks(&self) -> usize {
        self.regions.len()
    }
}

/// A collectively allocated object: identical offset and size on all ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymObject {
    pub offset: usize,
    pub size: usize,
}

impl SymObject {
    pub fn contains(&self, offset: usize, len: usize) -> bool {
        offset >= self.offset && offset + len <= self.offset + self.size
    }
}

/// Completion predicate for [`SymmetricHeap::wait_until_all`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalCondition {
    NotEqual(u64),
    Equal(u64),
}

impl SignalCondition {
    fn holds(self, v: u64) -> bool {
        match self {
            SignalCondition::NotEqual(x) => v != x,
            SignalCondition::Equal(x) => v == x,
        }
    }
}

enum PutCmd {
    Put { offset: usize, data: Vec<u8> },
    Fence,
    Flush(Sender<()>),
}

struct PutEngine {
    tx: Sender<PutCmd>,
    worker: JoinHandle<()>,
}

#[derive(Default)]
struct HeapState {
    cursor: usize,
    registry: Vec<SymObject>,
}

/// One rank's handle on the symmetric heap world.
pub struct SymmetricHeap {
    world: Arc<SymmetricWorld>,
    rank: usize,
    abort: AbortFlag,
    timeout: Duration,
    state: Mutex<HeapState>,
    engines: Mutex<HashMap<usize, PutEngine>>,
}

impl SymmetricHeap {
    pub(crate) fn new(
        world: Arc<SymmetricWorld>,
        rank: usize,
        abort: AbortFlag,
        timeout: Duration,
    ) -> Self {
        SymmetricHeap {
            world,
            rank,
            abort,
            timeout,
            state: Mutex::default(),
            engines: Mutex::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Snapshot of the allocation registry, in allocation order.
    pub fn registry(&self) -> Vec<SymObject> {
        self.state.lock().unwrap().registry.clone()
    }

    fn region(&self, rank: usize) -> &HeapRegion {
        &self.world.regions[rank]
    }

    fn check_range(&self, offset: usize, len: usize) -> Result<()> {
        let st = self.state.lock().unwrap();
        if st.registry.iter().any(|o| o.contains(offset, len)) {
            Ok(())
        } else {
            Err(SfError::SymmetricRange { offset, len })
        }
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.world.nranks() {
            return Err(SfError::RankOutOfRange {
                rank,
                size: self.world.nranks(),
            });
        }
        Ok(())
    }

    fn reserve(&self, size: usize) -> Result<SymObject> {
        let mut st = self.state.lock().unwrap();
        let offset = st.cursor;
        let advance = size.div_ceil(ALIGN).max(1) * ALIGN;
        if offset + advance > self.world.capacity {
            return Err(SfError::HeapExhausted {
                requested: size,
                available: self.world.capacity - offset,
            });
        }
        st.cursor += advance;
        let obj = SymObject { offset, size };
        st.registry.push(obj);
        let mut bytes = self.region(self.rank).bytes.lock().unwrap();
        if bytes.len() < st.cursor {
            bytes.resize(st.cursor, 0);
        }
        Ok(obj)
    }

    /// Collective: every rank receives an object sized to the maximum of the
    /// requested sizes, at the same offset everywhere.
    pub fn collective_alloc(&self, comm: &Communicator, local_size: usize) -> Result<SymObject> {
        let size = comm.allreduce_max(&[local_size as i64])?[0] as usize;
        let obj = comm.agree(self.reserve(size))?;
        // Every rank has grown its region before this returns.
        let lo = comm.allreduce_min(&[obj.offset as i64])?[0];
        let hi = comm.allreduce_max(&[obj.offset as i64])?[0];
        if lo != hi {
            return Err(SfError::AsymmetricHeap);
        }
        Ok(obj)
    }

    fn engine(&self, dest: usize) -> Sender<PutCmd> {
        let mut engines = self.engines.lock().unwrap();
        engines
            .entry(dest)
            .or_insert_with(|| {
                let (tx, rx) = mpsc::channel();
                let region = self.world.regions[dest].clone();
                let delays = self.world.delays;
                let seed = delays.seed ^ ((self.rank as u64) << 32 | dest as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let worker = thread::Builder::new()
                    .name(format!("sf-put-{}->{dest}", self.rank))
                    .spawn(move || deliver_loop(rx, region, delays, seed))
                    .expect("spawn put worker");
                PutEngine { tx, worker }
            })
            .tx
            .clone()
    }

    /// Nonblocking put of `data` to `dest` at symmetric `offset`. Returning
    /// does not imply delivery.
    pub fn put_nbi(&self, dest: usize, offset: usize, data: &[u8]) -> Result<()> {
        self.check_rank(dest)?;
        self.check_range(offset, data.len())?;
        if dest == self.rank || self.world.direct_puts {
            self.region(dest).write(offset, data);
            return Ok(());
        }
        self.engine(dest)
            .send(PutCmd::Put {
                offset,
                data: data.to_vec(),
            })
            .map_err(|_| SfError::Transport("put engine stopped".into()))
    }

    /// Orders puts to `dest` (or to every destination) issued before the
    /// fence ahead of those issued after it.
    pub fn fence(&self, dest: Option<usize>) -> Result<()> {
        let engines = self.engines.lock().unwrap();
        for (d, e) in engines.iter() {
            if dest.is_none_or(|x| x == *d) {
                let _ = e.tx.send(PutCmd::Fence);
            }
        }
        Ok(())
    }

    /// Blocks until every put issued so far has been delivered.
    pub fn quiet(&self) -> Result<()> {
        let waits: Vec<Receiver<()>> = {
            let engines = self.engines.lock().unwrap();
            engines
                .values()
                .map(|e| {
                    let (tx, rx) = mpsc::channel();
                    let _ = e.tx.send(PutCmd::Flush(tx));
                    rx
                })
                .collect()
        };
        for rx in waits {
            rx.recv_timeout(self.timeout).map_err(|_| SfError::Timeout {
                waited: self.timeout,
                what: "put completion".into(),
            })?;
        }
        Ok(())
    }

    /// Remote signal update; a put of one `u64`.
    pub fn signal_set(&self, dest: usize, signal: usize, value: u64) -> Result<()> {
        self.put_nbi(dest, signal, &value.to_le_bytes())
    }

    /// Writes a signal slot in this rank's own region.
    pub fn signal_set_local(&self, signal: usize, value: u64) -> Result<()> {
        self.write_local(signal, &value.to_le_bytes())
    }

    pub fn signal_get(&self, signal: usize) -> Result<u64> {
        let b = self.read_local(signal, 8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_local(&self, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.check_range(offset, len)?;
        let b = self.region(self.rank).bytes.lock().unwrap();
        Ok(b[offset..offset + len].to_vec())
    }

    pub fn write_local(&self, offset: usize, data: &[u8]) -> Result<()> {
        self.check_range(offset, data.len())?;
        self.region(self.rank).write(offset, data);
        Ok(())
    }

    /// Blocks until every listed local signal satisfies `cond`.
    pub fn wait_until_all(&self, signals: &[usize], cond: SignalCondition) -> Result<()> {
        if signals.is_empty() {
            return Ok(());
        }
        for s in signals {
            self.check_range(*s, 8)?;
        }
        let region = self.region(self.rank);
        let deadline = Instant::now() + self.timeout;
        let mut b = region.bytes.lock().unwrap();
        loop {
            let done = signals.iter().all(|s| {
                cond.holds(u64::from_le_bytes(b[*s..*s + 8].try_into().unwrap()))
            });
            if done {
                return Ok(());
            }
            if self.abort.load(Ordering::Relaxed) {
                return Err(SfError::Aborted);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SfError::Timeout {
                    waited: self.timeout,
                    what: format!("signals {signals:?} on rank {}", self.rank),
                });
            }
            b = region
                .changed
                .wait_timeout(b, POLL_SLICE.min(deadline - now))
                .unwrap()
                .0;
        }
    }
}

impl Drop for SymmetricHeap {
    fn drop(&mut self) {
        let engines: Vec<PutEngine> = self
            .engines
            .get_mut()
            .map(|m| m.drain().map(|(_, e)| e).collect())
            .unwrap_or_default();
        for e in engines {
            drop(e.tx);
            let _ = e.worker.join();
        }
    }
}

fn deliver_loop(rx: Receiver<PutCmd>, region: Arc<HeapRegion>, delays: DelayConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pause = |rng: &mut ChaCha8Rng| {
        if delays.enabled() {
            let nanos = rng.gen_range(0..=delays.max_delay.as_nanos() as u64);
            thread::sleep(Duration::from_nanos(nanos));
        }
    };
    while let Ok(first) = rx.recv() {
        // Let more commands pile up so that one epoch holds several puts.
        pause(&mut rng);
        let mut batch = Vec::new();
        let mut boundary = None;
        let mut next = Some(first);
        while let Some(cmd) = next.take() {
            match cmd {
                PutCmd::Put { offset, data } => {
                    batch.push((offset, data));
                    next = rx.try_recv().ok();
                }
                other => boundary = Some(other),
            }
        }
        if delays.reorder {
            batch.shuffle(&mut rng);
        }
        for (offset, data) in batch {
            pause(&mut rng);
            region.write(offset, &data);
        }
        if let Some(PutCmd::Flush(ack)) = boundary {
            let _ = ack.send(());
        }
    }
}
