//! Ping-pong latency between two ranks.
//!
//! Rank 0 owns `n` byte roots and rank 1 owns `n` contiguous leaves attached
//! to them one to one. A bcast carries the message to rank 1 and a reduce
//! with `Replace` bounces it back; the reported latency is half of that
//! round trip.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Result, SfError};
use crate::harness::{run_ranks, RunConfig};
use crate::scalar::{Byte, ReduceOp, Unit};
use crate::sfgraph::{PackStats, RankGraph, RootRef, SfOptions, StarForest};
use crate::transport::{Backend, Communicator};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PingPongConfig {
    pub sizes: Vec<usize>,
    pub iters: usize,
    pub warmup: usize,
}

impl Default for PingPongConfig {
    fn default() -> Self {
        PingPongConfig {
            sizes: sweep(1 << 10, 4 << 20, 4),
            iters: 50,
            warmup: 5,
        }
    }
}

/// Geometric sizes from `min` up to `max` inclusive.
pub fn sweep(min: usize, max: usize, factor: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut s = min.max(1);
    while s <= max {
        out.push(s);
        s = s.saturating_mul(factor.max(2));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingPongRow {
    pub bytes: usize,
    pub backend: Backend,
    pub iters: usize,
    pub median_us: f64,
    pub min_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingPongReport {
    pub rows: Vec<PingPongRow>,
    /// Pack-copy counters of the forests, by rank.
    pub pack_stats: Vec<Vec<PackStats>>,
}

pub const CSV_HEADER: &str = "bytes,backend,iters,median_us,min_us";

pub fn to_csv(rows: &[PingPongRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.3},{:.3}",
            r.bytes, r.backend, r.iters, r.median_us, r.min_us
        )
        .unwrap();
    }
    s
}

fn stamp(iter: usize, i: usize) -> Byte {
    Byte((i.wrapping_mul(131) ^ iter.wrapping_mul(29)) as u8)
}

/// The benchmark forest for an `n`-byte message.
pub fn pingpong_sf(comm: &Communicator, n: usize) -> Result<StarForest> {
    if comm.size() != 2 {
        return Err(SfError::Precondition(format!(
            "ping-pong needs exactly 2 ranks, got {}",
            comm.size()
        )));
    }
    let graph = if comm.rank() == 0 {
        RankGraph {
            nroots: n,
            leaf_local: None,
            leaf_remote: Vec::new(),
        }
    } else {
        RankGraph {
            nroots: 0,
            leaf_local: None,
            leaf_remote: (0..n).map(|i| RootRef::new(0, i)).collect(),
        }
    };
    let options = SfOptions {
        verify_buffers: false,
        ..SfOptions::default()
    };
    StarForest::from_graph(comm, graph, options)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs one rank's side of the sweep. Rank 0 returns the rows.
pub fn pingpong_rank(comm: &Communicator, config: &PingPongConfig) -> Result<(Vec<PingPongRow>, Vec<PackStats>)> {
    let me = comm.rank();
    let unit = Unit::scalar::<Byte>();
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for &n in &config.sizes {
        let sf = pingpong_sf(comm, n)?;
        let mut roots = vec![Byte(0); sf.nroots()];
        let mut leaves = vec![Byte(0); sf.leaf_extent()];
        let mut echo = vec![Byte(0); sf.nroots()];
        let mut samples = Vec::with_capacity(config.iters);
        for iter in 0..config.warmup + config.iters {
            if me == 0 {
                for (i, b) in roots.iter_mut().enumerate() {
                    *b = stamp(iter, i);
                }
                echo.fill(Byte(0));
            }
            comm.barrier()?;
            let t0 = Instant::now();
            sf.bcast(unit, &roots, &mut leaves, ReduceOp::Replace)?;
            sf.reduce(unit, &leaves, &mut echo, ReduceOp::Replace)?;
            let elapsed = t0.elapsed();
            let received = if me == 0 { &echo } else { &leaves };
            if let Some(i) = (0..n).find(|&i| received[i] != stamp(iter, i)) {
                return Err(SfError::Integrity(format!(
                    "payload on rank {me}: size {n}, iteration {iter}, byte {i}"
                )));
            }
            if iter >= config.warmup {
                samples.push(elapsed.as_secs_f64() * 1e6 / 2.0);
            }
        }
        stats.push(sf.pack_stats());
        if me == 0 && !samples.is_empty() {
            let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            rows.push(PingPongRow {
                bytes: n,
                backend: comm.backend(),
                iters: config.iters,
                median_us: median(&mut samples),
                min_us: min,
            });
        }
    }
    Ok((rows, stats))
}

/// Runs the sweep on two ranks with the backend of `run`.
pub fn run_pingpong(config: &PingPongConfig, run: &RunConfig) -> Result<PingPongReport> {
    let mut run = run.clone();
    run.nranks = 2;
    let cfg = config.clone();
    let out = run_ranks(&run, move |ctx| pingpong_rank(&ctx.comm, &cfg))
        .map_err(|e| SfError::Run(e.to_string()))?;
    let mut rows = Vec::new();
    let mut pack_stats = Vec::new();
    for (r, s) in out {
        rows.extend(r);
        pack_stats.push(s);
    }
    Ok(PingPongReport { rows, pack_stats })
}
