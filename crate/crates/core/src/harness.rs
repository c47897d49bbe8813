//! Runs a closure on N ranks, one thread each, and collects the outcomes.
//!
//! A rank that returns an error or panics raises a shared abort flag so that
//! peers blocked in the transport give up promptly instead of waiting for
//! the full timeout.

use std::collections::BTreeSet;
use std::env;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SfError};
use crate::sfgraph::{RankGraph, RootRef, SfOptions, StarForest};
use crate::symheap::{DelayConfig, SymmetricWorld, DEFAULT_CAPACITY};
use crate::transport::sockets::bind_local;
use crate::transport::{Backend, CommOptions, Communicator, DEFAULT_CONSENSUS_THRESHOLD, DEFAULT_TIMEOUT};

/// Extra time granted after the deadline for ranks to notice the abort.
const GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub nranks: usize,
    pub backend: Backend,
    pub timeout: Duration,
    pub seed: u64,
    pub consensus_threshold: usize,
    /// Put scheduling of the one-sided backend.
    pub delays: DelayConfig,
    pub heap_capacity: usize,
}

impl RunConfig {
    pub fn new(nranks: usize) -> Self {
        RunConfig {
            nranks,
            backend: Backend::Threads,
            timeout: DEFAULT_TIMEOUT,
            seed: 0,
            consensus_threshold: DEFAULT_CONSENSUS_THRESHOLD,
            delays: DelayConfig::none(),
            heap_capacity: DEFAULT_CAPACITY,
        }
    }

    pub fn backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn delays(mut self, delays: DelayConfig) -> Self {
        self.delays = delays;
        self
    }

    /// Defaults overridden by `SF_NRANKS`, `SF_TRANSPORT`, `SF_SEED` and
    /// `SF_TIMEOUT_S`.
    pub fn from_env() -> Result<Self> {
        fn var<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
            match env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| SfError::Precondition(format!("{name}={v:?} is not valid"))),
                Err(_) => Ok(None),
            }
        }
        let mut cfg = RunConfig::new(var("SF_NRANKS")?.unwrap_or(2));
        if let Some(b) = var::<Backend>("SF_TRANSPORT")? {
            cfg.backend = b;
        }
        if let Some(s) = var("SF_SEED")? {
            cfg.seed = s;
        }
        if let Some(t) = var::<f64>("SF_TIMEOUT_S")? {
            if !(t > 0.0) {
                return Err(SfError::Precondition("SF_TIMEOUT_S must be positive".into()));
            }
            cfg.timeout = Duration::from_secs_f64(t);
        }
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), HarnessError> {
        if self.nranks == 0 {
            return Err(HarnessError::Config("nranks must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(HarnessError::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    fn comm_options(&self) -> CommOptions {
        CommOptions {
            timeout: self.timeout,
            consensus_threshold: self.consensus_threshold,
        }
    }
}

/// What a rank body receives.
pub struct RankContext {
    pub comm: Communicator,
    /// Seeded from the run seed and the rank.
    pub rng: ChaCha8Rng,
    pub seed: u64,
}

impl RankContext {
    pub fn rank(&self) -> usize {
        self.comm.rank()
    }

    pub fn size(&self) -> usize {
        self.comm.size()
    }
}

/// Per-rank seed: the run seed mixed with the rank id (splitmix64 finalizer).
pub fn rank_seed(seed: u64, rank: usize) -> u64 {
    let mut z = seed ^ (rank as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankFailure {
    pub rank: usize,
    pub message: String,
}

impl fmt::Display for RankFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rank {}: {}", self.rank, self.message)
    }
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    Config(String),

    #[error("timed out after {waited:?}; stalled ranks {stalled:?}; {}", list(failures))]
    Timeout {
        waited: Duration,
        stalled: Vec<usize>,
        failures: Vec<RankFailure>,
    },

    #[error("{}", list(failures))]
    RankFailed { failures: Vec<RankFailure> },

    #[error("could not start ranks: {0}")]
    Startup(#[from] SfError),
}

impl HarnessError {
    /// Ranks named by the report.
    pub fn ranks(&self) -> Vec<usize> {
        match self {
            HarnessError::Timeout { stalled, .. } => stalled.clone(),
            HarnessError::RankFailed { failures } => failures.iter().map(|f| f.rank).collect(),
            _ => Vec::new(),
        }
    }
}

enum Outcome<R> {
    Done(R),
    Failed(SfError),
    Panicked(String),
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs `body` on every rank and returns the results indexed by rank.
pub fn run_ranks<R, F>(config: &RunConfig, body: F) -> std::result::Result<Vec<R>, HarnessError>
where
    R: Send + 'static,
    F: Fn(RankContext) -> Result<R> + Send + Sync + 'static,
{
    config.validate()?;
    let n = config.nranks;
    let abort: Arc<AtomicBool> = Arc::default();
    let opts = config.comm_options();
    // Shared-memory endpoints are built up front; socket endpoints connect
    // inside their rank thread because connecting blocks on peers.
    let mut endpoints: Vec<Option<Communicator>> = match config.backend {
        Backend::Threads => {
            Communicator::shared_memory_world(n, opts.clone(), Backend::Threads, None, abort.clone())
                .into_iter()
                .map(Some)
                .collect()
        }
        Backend::OneSided => {
            let world = SymmetricWorld::new(n, config.heap_capacity, config.delays);
            Communicator::shared_memory_world(n, opts.clone(), Backend::OneSided, Some(world), abort.clone())
                .into_iter()
                .map(Some)
                .collect()
        }
        Backend::Sockets => (0..n).map(|_| None).collect(),
    };
    let mut listeners = match config.backend {
        Backend::Sockets => {
            let (l, m) = bind_local(n)?;
            (l.into_iter().map(Some).collect::<Vec<_>>(), Some(m))
        }
        _ => (Vec::new(), None),
    };

    let body = Arc::new(body);
    let (tx, rx) = mpsc::channel();
    for rank in 0..n {
        let tx = tx.clone();
        let body = body.clone();
        let rank_abort = abort.clone();
        let opts = opts.clone();
        let endpoint = endpoints[rank].take();
        let socket = listeners.0.get_mut(rank).and_then(Option::take);
        let manifest = listeners.1.clone();
        let seed = rank_seed(config.seed, rank);
        let spawned = thread::Builder::new()
            .name(format!("sf-rank-{rank}"))
            .spawn(move || {
                let abort = rank_abort;
                let abort_for_run = abort.clone();
                let run = move || -> Result<R> {
                    let comm = match (endpoint, socket, manifest) {
                        (Some(c), _, _) => c,
                        (None, Some(l), Some(m)) => {
                            Communicator::sockets_with_abort(rank, l, &m, opts, abort_for_run)?
                        }
                        _ => unreachable!("rank endpoint missing"),
                    };
                    body(RankContext {
                        comm,
                        rng: ChaCha8Rng::seed_from_u64(seed),
                        seed,
                    })
                };
                let outcome = match panic::catch_unwind(AssertUnwindSafe(run)) {
                    Ok(Ok(r)) => Outcome::Done(r),
                    Ok(Err(e)) => Outcome::Failed(e),
                    Err(p) => Outcome::Panicked(panic_message(p)),
                };
                if !matches!(outcome, Outcome::Done(_)) {
                    abort.store(true, Ordering::Relaxed);
                }
                let _ = tx.send((rank, outcome));
            });
        if let Err(e) = spawned {
            abort.store(true, Ordering::Relaxed);
            return Err(HarnessError::Startup(e.into()));
        }
    }
    drop(tx);

    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let mut failures = Vec::new();
    let mut timed_out = BTreeSet::new();
    let mut pending: BTreeSet<usize> = (0..n).collect();
    let deadline = Instant::now() + config.timeout + GRACE;
    let mut hard_deadline = None;
    while !pending.is_empty() {
        let now = Instant::now();
        let limit = hard_deadline.unwrap_or(deadline);
        if now >= limit {
            break;
        }
        match rx.recv_timeout(limit - now) {
            Ok((rank, outcome)) => {
                pending.remove(&rank);
                match outcome {
                    Outcome::Done(r) => results[rank] = Some(r),
                    Outcome::Failed(SfError::Aborted) => {}
                    Outcome::Failed(e) => {
                        if matches!(e, SfError::Timeout { .. }) {
                            timed_out.insert(rank);
                        }
                        failures.push(RankFailure {
                            rank,
                            message: e.to_string(),
                        });
                    }
                    Outcome::Panicked(msg) => failures.push(RankFailure {
                        rank,
                        message: format!("panicked: {msg}"),
                    }),
                }
                if !failures.is_empty() && hard_deadline.is_none() {
                    hard_deadline = Some(Instant::now() + GRACE);
                }
            }
            Err(_) => break,
        }
    }
    if !pending.is_empty() {
        abort.store(true, Ordering::Relaxed);
    }
    if !pending.is_empty() || !timed_out.is_empty() {
        let mut stalled: BTreeSet<usize> = pending;
        stalled.extend(timed_out);
        return Err(HarnessError::Timeout {
            waited: config.timeout,
            stalled: stalled.into_iter().collect(),
            failures,
        });
    }
    if !failures.is_empty() {
        failures.sort_by_key(|f| f.rank);
        return Err(HarnessError::RankFailed { failures });
    }
    let aborted: Vec<usize> = (0..n).filter(|r| results[*r].is_none()).collect();
    if !aborted.is_empty() {
        return Err(HarnessError::RankFailed {
            failures: aborted
                .into_iter()
                .map(|rank| RankFailure {
                    rank,
                    message: SfError::Aborted.to_string(),
                })
                .collect(),
        });
    }
    Ok(results.into_iter().map(Option::unwrap).collect())
}

/// A random forest over `nranks` ranks with at most `max_vertices` roots and
/// leaf slots per rank. Deterministic in `seed`; every rank can compute the
/// whole forest and keep its own part.
///
/// Self edges, isolated leaves and zero-degree roots all occur with nonzero
/// probability. The leaf list is sometimes omitted (contiguous leaves) and
/// otherwise given in shuffled order.
pub fn random_forest(seed: u64, nranks: usize, max_vertices: usize) -> Vec<RankGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nroots: Vec<usize> = (0..nranks).map(|_| rng.gen_range(0..=max_vertices)).collect();
    let owners: Vec<usize> = (0..nranks).filter(|r| nroots[*r] > 0).collect();
    (0..nranks)
        .map(|_| {
            let space = rng.gen_range(0..=max_vertices);
            if owners.is_empty() {
                return RankGraph {
                    nroots: 0,
                    leaf_local: None,
                    leaf_remote: Vec::new(),
                };
            }
            let contiguous = rng.gen_bool(0.3);
            let mut leaves: Vec<usize> = if contiguous {
                (0..rng.gen_range(0..=space)).collect()
            } else {
                let density = rng.gen_range(0.3..1.0);
                (0..space).filter(|_| rng.gen_bool(density)).collect()
            };
            if !contiguous {
                leaves.shuffle(&mut rng);
            }
            let remote = leaves
                .iter()
                .map(|_| {
                    let r = owners[rng.gen_range(0..owners.len())];
                    RootRef::new(r, rng.gen_range(0..nroots[r]))
                })
                .collect();
            RankGraph {
                nroots: 0,
                leaf_local: (!contiguous).then_some(leaves),
                leaf_remote: remote,
            }
        })
        .enumerate()
        .map(|(r, mut g)| {
            g.nroots = nroots[r];
            g
        })
        .collect()
}

/// Collective: builds and sets up this rank's part of
/// [`random_forest`]`(seed, comm.size(), max_vertices)`.
pub fn random_sf(
    comm: &Communicator,
    seed: u64,
    max_vertices: usize,
    options: SfOptions,
) -> Result<StarForest> {
    let mut all = random_forest(seed, comm.size(), max_vertices);
    StarForest::from_graph(comm, all.swap_remove(comm.rank()), options)
}
