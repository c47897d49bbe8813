mod common;

use std::collections::HashMap;
use std::thread;
use std::time::{Duration, Instant};

use starforest::symheap::{
    exchange_offsets, put_phase, receive_phase, DelayConfig, FlowLayout, FlowResources, SignalCondition,
};
use starforest::{random_forest, run_ranks, Backend, RankGraph, RunConfig, SfError};

fn onesided(n: usize) -> RunConfig {
    RunConfig::new(n).backend(Backend::OneSided)
}

fn delayed(n: usize, max_us: u64, seed: u64) -> RunConfig {
    onesided(n).delays(DelayConfig::random(Duration::from_micros(max_us), seed))
}

#[test]
fn collective_alloc_takes_largest_size_at_one_offset() {
    let out = run_ranks(&onesided(3), |ctx| {
        let heap = ctx.comm.heap().unwrap();
        let first = heap.collective_alloc(&ctx.comm, [100, 300, 200][ctx.rank()])?;
        let second = heap.collective_alloc(&ctx.comm, 1)?;
        Ok((first, second, heap.registry().len()))
    })
    .unwrap();
    for (first, second, n) in &out {
        assert_eq!(first.size, 300);
        assert_eq!(first.offset, out[0].0.offset);
        assert_eq!(second.offset, out[0].1.offset);
        assert!(second.offset >= first.offset + 300);
        assert_eq!(*n, 2);
    }
}

#[test]
fn heap_limits_are_enforced() {
    let mut config = onesided(2);
    config.heap_capacity = 64;
    let out = run_ranks(&config, |ctx| {
        let heap = ctx.comm.heap().unwrap();
        let obj = heap.collective_alloc(&ctx.comm, 16)?;
        let outside = heap.put_nbi(1 - ctx.rank(), obj.offset + 12, &[0u8; 8]);
        let bad_rank = heap.put_nbi(9, obj.offset, &[0u8; 8]);
        let too_big = heap.collective_alloc(&ctx.comm, 1000);
        Ok((
            matches!(outside, Err(SfError::SymmetricRange { .. })),
            matches!(bad_rank, Err(SfError::RankOutOfRange { .. })),
            matches!(too_big, Err(SfError::HeapExhausted { .. })),
        ))
    })
    .unwrap();
    assert!(out.iter().all(|&t| t == (true, true, true)));
}

#[test]
fn threads_backend_has_no_heap() {
    let out = run_ranks(&RunConfig::new(2), |ctx| Ok(ctx.comm.heap().is_none())).unwrap();
    assert_eq!(out, vec![true, true]);
}

#[test]
fn concurrent_puts_to_disjoint_chunks_land_intact() {
    for seed in 0..10 {
        let out = run_ranks(&delayed(3, 200, seed), |ctx| {
            let heap = ctx.comm.heap().unwrap();
            let obj = heap.collective_alloc(&ctx.comm, 2 * 256)?;
            if ctx.rank() > 0 {
                let chunk: Vec<u8> = (0..256).map(|i| (i as u8).wrapping_mul(ctx.rank() as u8 + 3)).collect();
                for piece in 0..8 {
                    let at = obj.offset + (ctx.rank() - 1) * 256 + piece * 32;
                    heap.put_nbi(0, at, &chunk[piece * 32..(piece + 1) * 32])?;
                }
                heap.quiet()?;
            }
            ctx.comm.barrier()?;
            if ctx.rank() == 0 {
                return heap.read_local(obj.offset, 512);
            }
            Ok(Vec::new())
        })
        .unwrap();
        for r in 1..3u8 {
            let want: Vec<u8> = (0..256).map(|i| (i as u8).wrapping_mul(r + 3)).collect();
            let at = (r as usize - 1) * 256;
            assert_eq!(out[0][at..at + 256], want[..], "seed {seed} sender {r}");
        }
    }
}

#[test]
fn signal_never_overtakes_fenced_data() {
    const TRIALS: u64 = 1000;
    run_ranks(&delayed(2, 30, 11), |ctx| {
        let heap = ctx.comm.heap().unwrap();
        let data = heap.collective_alloc(&ctx.comm, 64)?;
        let sig = heap.collective_alloc(&ctx.comm, 8)?;
        let ack = heap.collective_alloc(&ctx.comm, 8)?;
        for t in 1..=TRIALS {
            if ctx.rank() == 0 {
                let payload: Vec<u8> = (0..64).map(|i| (t as u8).wrapping_add(i)).collect();
                for k in 0..4 {
                    heap.put_nbi(1, data.offset + 16 * k, &payload[16 * k..16 * (k + 1)])?;
                }
                heap.fence(Some(1))?;
                heap.signal_set(1, sig.offset, t)?;
                heap.wait_until_all(&[ack.offset], SignalCondition::Equal(t))?;
            } else {
                heap.wait_until_all(&[sig.offset], SignalCondition::Equal(t))?;
                let got = heap.read_local(data.offset, 64)?;
                let want: Vec<u8> = (0..64).map(|i| (t as u8).wrapping_add(i)).collect();
                if got != want {
                    return Err(SfError::Integrity(format!("trial {t}: signal before data")));
                }
                heap.signal_set(0, ack.offset, t)?;
            }
        }
        Ok(())
    })
    .unwrap();
}

#[test]
fn wait_returns_only_after_every_sender() {
    let out = run_ranks(&delayed(4, 2000, 3), |ctx| {
        let heap = ctx.comm.heap().unwrap();
        let sigs = heap.collective_alloc(&ctx.comm, 3 * 8)?;
        if ctx.rank() == 0 {
            let slots: Vec<usize> = (0..3).map(|j| sigs.offset + 8 * j).collect();
            heap.wait_until_all(&slots, SignalCondition::NotEqual(0))?;
            let seen: Vec<u64> = slots.iter().map(|s| heap.signal_get(*s)).collect::<Result<_, _>>()?;
            return Ok(seen);
        }
        thread::sleep(Duration::from_millis(5 * ctx.rank() as u64));
        heap.signal_set(0, sigs.offset + 8 * (ctx.rank() - 1), ctx.rank() as u64)?;
        heap.quiet()?;
        Ok(Vec::new())
    })
    .unwrap();
    assert_eq!(out[0], vec![1, 2, 3]);
}

#[test]
fn waiting_on_a_silent_signal_times_out() {
    let config = onesided(1).timeout(Duration::from_millis(100));
    let out = run_ranks(&config, |ctx| {
        let heap = ctx.comm.heap().unwrap();
        let s = heap.collective_alloc(&ctx.comm, 8)?;
        Ok(matches!(
            heap.wait_until_all(&[s.offset], SignalCondition::NotEqual(0)),
            Err(SfError::Timeout { .. })
        ))
    })
    .unwrap();
    assert_eq!(out, vec![true]);
}

/// Remote neighbor lists `(rank, edge count)` of every rank, without self
/// edges, in rank order.
fn neighbor_counts(forest: &[RankGraph]) -> Vec<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let n = forest.len();
    let mut count = vec![vec![0usize; n]; n]; // [leaf rank][root rank]
    for e in common::edges(forest) {
        if e.leaf_rank != e.root_rank {
            count[e.leaf_rank][e.root_rank] += 1;
        }
    }
    (0..n)
        .map(|me| {
            let roots = (0..n).filter(|p| count[me][*p] > 0).map(|p| (p, count[me][p])).collect();
            let leaves = (0..n).filter(|q| count[*q][me] > 0).map(|q| (q, count[q][me])).collect();
            (roots, leaves)
        })
        .collect()
}

#[test]
fn two_rank_offsets() {
    let out = run_ranks(&RunConfig::new(2), |ctx| {
        let (roots, leaves) = if ctx.rank() == 0 { (vec![], vec![(1, 5)]) } else { (vec![(0, 5)], vec![]) };
        exchange_offsets(&ctx.comm, &roots, &leaves)
    })
    .unwrap();
    assert_eq!(out[0].leaf_rank_data, vec![0]);
    assert_eq!(out[0].leaf_rank_signal, vec![0]);
    assert!(out[0].root_rank_data.is_empty());
    assert_eq!(out[1].root_rank_data, vec![0]);
}

#[test]
fn offsets_disagreeing_counts_fail() {
    let out = run_ranks(&RunConfig::new(2), |ctx| {
        let (roots, leaves) = if ctx.rank() == 0 { (vec![], vec![(1, 5)]) } else { (vec![(0, 4)], vec![]) };
        Ok(exchange_offsets(&ctx.comm, &roots, &leaves).is_err())
    })
    .unwrap();
    assert_eq!(out, vec![true, true]);
}

#[test]
fn chunk_offsets_partition_every_buffer() {
    for seed in 0..30 {
        let forest = random_forest(seed, 2 + seed as usize % 6, 20);
        let lists = neighbor_counts(&forest);
        let n = forest.len();
        let l2 = lists.clone();
        let layouts = run_ranks(&RunConfig::new(n), move |ctx| {
            let (roots, leaves) = &l2[ctx.rank()];
            let t = exchange_offsets(&ctx.comm, roots, leaves)?;
            Ok((FlowLayout::root_to_leaf(&t, roots, leaves), FlowLayout::leaf_to_root(&t, roots, leaves)))
        })
        .unwrap();
        for flow in 0..2 {
            let pick = |p: usize| if flow == 0 { &layouts[p].0 } else { &layouts[p].1 };
            // (receiver) -> list of (offset, len, signal index)
            let mut writes: HashMap<usize, Vec<(usize, usize, usize)>> = HashMap::new();
            for p in 0..n {
                let lay = pick(p);
                for (i, &q) in lay.send_peers.iter().enumerate() {
                    let recv = pick(q);
                    let j = recv.recv_peers.iter().position(|r| *r == p).expect("receiver knows sender");
                    assert_eq!(lay.remote_signal_index[i], j, "seed {seed}");
                    assert_eq!(lay.remote_data_offset[i], recv.local_chunk_offset[j], "seed {seed}");
                    // the receiver clears our slot i
                    assert_eq!(recv.remote_sendsig_index[j], i, "seed {seed}");
                    writes.entry(q).or_default().push((lay.remote_data_offset[i], recv.local_chunk_len[j], j));
                }
            }
            for q in 0..n {
                let mut w = writes.remove(&q).unwrap_or_default();
                w.sort_unstable();
                let mut at = 0;
                for (off, len, _) in &w {
                    assert_eq!(*off, at, "gap or overlap on rank {q}, seed {seed}");
                    at += len;
                }
                assert_eq!(at, pick(q).recv_elements());
                let mut sig: Vec<usize> = w.iter().map(|x| x.2).collect();
                sig.sort_unstable();
                assert_eq!(sig, (0..w.len()).collect::<Vec<_>>());
            }
        }
    }
}

/// Runs `iters` root-to-leaf rounds of the put/signal protocol on the
/// neighbor lists of a random forest, each sender stamping its payload with
/// the iteration.
fn protocol_rounds(seed: u64, nranks: usize, iters: u64, max_delay_us: u64) {
    let forest = random_forest(seed, nranks, 16);
    let lists = neighbor_counts(&forest);
    run_ranks(&delayed(nranks, max_delay_us, seed), move |ctx| {
        let me = ctx.rank();
        let (roots, leaves) = &lists[me];
        let t = exchange_offsets(&ctx.comm, roots, leaves)?;
        let lay = FlowLayout::root_to_leaf(&t, roots, leaves);
        let res = FlowResources::allocate(&ctx.comm, &lay, 8)?;
        let heap = ctx.comm.heap().unwrap();
        for it in 0..iters {
            let payloads: Vec<Vec<u8>> = leaves
                .iter()
                .map(|&(q, n)| (0..n as u64).flat_map(|k| (it * 1_000_000 + me as u64 * 1000 + q as u64 * 10 + k).to_le_bytes()).collect())
                .collect();
            put_phase(heap, &lay, &res, &payloads)?;
            let got = receive_phase(heap, &lay, &res)?;
            for (chunk, &(p, n)) in got.iter().zip(roots) {
                let want: Vec<u8> = (0..n as u64).flat_map(|k| (it * 1_000_000 + p as u64 * 1000 + me as u64 * 10 + k).to_le_bytes()).collect();
                if *chunk != want {
                    return Err(SfError::Integrity(format!("iteration {it}: chunk from {p} on {me}")));
                }
            }
        }
        Ok(())
    })
    .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
}

#[test]
fn protocol_survives_random_delays() {
    for (seed, n) in [(1, 2), (2, 4), (3, 6)] {
        protocol_rounds(seed, n, 60, 500);
    }
}

#[test]
fn slow_receiver_blocks_second_put() {
    let out = run_ranks(&onesided(2), |ctx| {
        let (roots, leaves) = if ctx.rank() == 0 { (vec![], vec![(1, 4)]) } else { (vec![(0, 4)], vec![]) };
        let t = exchange_offsets(&ctx.comm, &roots, &leaves)?;
        let lay = FlowLayout::root_to_leaf(&t, &roots, &leaves);
        let res = FlowResources::allocate(&ctx.comm, &lay, 1)?;
        let heap = ctx.comm.heap().unwrap();
        if ctx.rank() == 0 {
            put_phase(heap, &lay, &res, &[vec![1, 1, 1, 1]])?;
            let t0 = Instant::now();
            put_phase(heap, &lay, &res, &[vec![2, 2, 2, 2]])?;
            Ok((t0.elapsed(), Vec::new()))
        } else {
            thread::sleep(Duration::from_millis(100));
            let a = receive_phase(heap, &lay, &res)?;
            let b = receive_phase(heap, &lay, &res)?;
            Ok((Duration::ZERO, [a, b].concat()))
        }
    })
    .unwrap();
    assert!(out[0].0 >= Duration::from_millis(90), "second put waited {:?}", out[0].0);
    assert_eq!(out[1].1, vec![vec![1, 1, 1, 1], vec![2, 2, 2, 2]]);
}
