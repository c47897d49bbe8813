//! Per-rank incoming message queue.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Result, SfError};

const POLL_SLICE: Duration = Duration::from_millis(20);

#[derive(Debug)]
pub(crate) struct Envelope {
    pub src: usize,
    pub tag: u64,
    pub payload: Vec<u8>,
}

#[derive(Default)]
struct Queue {
    items: VecDeque<Envelope>,
    generation: u64,
}

/// FIFO of arrived messages. Matching always takes the oldest eligible
/// envelope, so messages between one (src, dest, tag) triple never overtake.
#[derive(Default)]
pub(crate) struct Mailbox {
    queue: Mutex<Queue>,
    arrived: Condvar,
}

impl Mailbox {
    pub fn push(&self, env: Envelope) {
        let mut q = self.queue.lock().unwrap();
        q.items.push_back(env);
        q.generation += 1;
        self.arrived.notify_all();
    }

    pub fn try_take(&self, pred: impl Fn(&Envelope) -> bool) -> Option<Envelope> {
        let mut q = self.queue.lock().unwrap();
        let pos = q.items.iter().position(|e| pred(e))?;
        q.items.remove(pos)
    }

    pub fn probe(&self, pred: impl Fn(&Envelope) -> bool) -> Option<(usize, u64, usize)> {
        let q = self.queue.lock().unwrap();
        q.items
            .iter()
            .find(|e| pred(e))
            .map(|e| (e.src, e.tag, e.payload.len()))
    }

    pub fn generation(&self) -> u64 {
        self.queue.lock().unwrap().generation
    }

    /// Blocks until a matching envelope arrives, the deadline passes, or the
    /// run is aborted.
    pub fn take(
        &self,
        pred: impl Fn(&Envelope) -> bool,
        timeout: Duration,
        abort: &AtomicBool,
        what: impl FnOnce() -> String,
    ) -> Result<Envelope> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.lock().unwrap();
        loop {
            if let Some(pos) = q.items.iter().position(|e| pred(e)) {
                return Ok(q.items.remove(pos).expect("position is valid"));
            }
            if abort.load(Ordering::Relaxed) {
                return Err(SfError::Aborted);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SfError::Timeout {
                    waited: timeout,
                    what: what(),
                });
            }
            let slice = POLL_SLICE.min(deadline - now);
            q = self.arrived.wait_timeout(q, slice).unwrap().0;
        }
    }

    /// Waits until something new arrives after `generation` or `slice` passes.
    pub fn wait_for_arrival(&self, generation: u64, slice: Duration) {
        let q = self.queue.lock().unwrap();
        if q.generation == generation {
            let _ = self.arrived.wait_timeout(q, slice).unwrap();
        }
    }
}

/// Shared flag raised by the harness when any rank fails.
pub(crate) type AbortFlag = Arc<AtomicBool>;
