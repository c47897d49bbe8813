//! Sequential reference evaluation over the global edge list, written
//! independently of the library's own code paths.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starforest::{run_ranks, RankGraph, ReduceOp, RunConfig, SfOptions, StarForest};

/// One edge: root `(root_rank, root)` feeds leaf `(leaf_rank, leaf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub root_rank: usize,
    pub root: usize,
    pub leaf_rank: usize,
    pub leaf: usize,
}

/// All edges, ordered by root, then leaf rank with the root's own rank
/// first, then leaf index.
pub fn edges(forest: &[RankGraph]) -> Vec<Edge> {
    let mut out = Vec::new();
    for (q, g) in forest.iter().enumerate() {
        let n = g.leaf_remote.len();
        for i in 0..n {
            let leaf = match &g.leaf_local {
                Some(l) => l[i],
                None => i,
            };
            let r = g.leaf_remote[i];
            out.push(Edge {
                root_rank: r.rank,
                root: r.offset,
                leaf_rank: q,
                leaf,
            });
        }
    }
    out.sort_by_key(|e| (e.root_rank, e.root, e.leaf_rank != e.root_rank, e.leaf_rank, e.leaf));
    out
}

pub fn leaf_extent(g: &RankGraph) -> usize {
    let n = g.leaf_remote.len();
    (0..n)
        .map(|i| g.leaf_local.as_ref().map_or(i, |l| l[i]) + 1)
        .max()
        .unwrap_or(0)
}

pub fn combine(op: ReduceOp, a: i64, b: i64) -> i64 {
    match op {
        ReduceOp::Replace => b,
        ReduceOp::Sum => a.wrapping_add(b),
        ReduceOp::Prod => a.wrapping_mul(b),
        ReduceOp::Max => a.max(b),
        ReduceOp::Min => a.min(b),
        ReduceOp::Land => ((a != 0) && (b != 0)) as i64,
        ReduceOp::Lor => ((a != 0) || (b != 0)) as i64,
        ReduceOp::Band => a & b,
        ReduceOp::Bor => a | b,
    }
}

/// `dst[to] ⊕= src[from]` along `pairs` of ((rank, index), (rank, index)).
pub fn apply(
    pairs: &[((usize, usize), (usize, usize))],
    src: &[Vec<i64>],
    dst: &mut [Vec<i64>],
    op: ReduceOp,
) {
    for &((fr, fi), (tr, ti)) in pairs {
        dst[tr][ti] = combine(op, dst[tr][ti], src[fr][fi]);
    }
}

pub fn root_to_leaf(forest: &[RankGraph]) -> Vec<((usize, usize), (usize, usize))> {
    edges(forest)
        .iter()
        .map(|e| ((e.root_rank, e.root), (e.leaf_rank, e.leaf)))
        .collect()
}

pub fn bcast(forest: &[RankGraph], roots: &[Vec<i64>], leaves: &[Vec<i64>], op: ReduceOp) -> Vec<Vec<i64>> {
    let mut out = leaves.to_vec();
    apply(&root_to_leaf(forest), roots, &mut out, op);
    out
}

pub fn reduce(forest: &[RankGraph], leaves: &[Vec<i64>], roots: &[Vec<i64>], op: ReduceOp) -> Vec<Vec<i64>> {
    let pairs: Vec<_> = root_to_leaf(forest).into_iter().map(|(a, b)| (b, a)).collect();
    let mut out = roots.to_vec();
    apply(&pairs, leaves, &mut out, op);
    out
}

/// Fetch-and-add with contributions applied in edge order.
pub fn fetch_add(
    forest: &[RankGraph],
    roots: &[Vec<i64>],
    leaves: &[Vec<i64>],
    update_init: &[Vec<i64>],
) -> (Vec<Vec<i64>>, Vec<Vec<i64>>) {
    let mut r = roots.to_vec();
    let mut u = update_init.to_vec();
    for e in edges(forest) {
        u[e.leaf_rank][e.leaf] = r[e.root_rank][e.root];
        r[e.root_rank][e.root] = r[e.root_rank][e.root].wrapping_add(leaves[e.leaf_rank][e.leaf]);
    }
    (r, u)
}

pub fn degrees(forest: &[RankGraph]) -> Vec<Vec<usize>> {
    let mut d: Vec<Vec<usize>> = forest.iter().map(|g| vec![0; g.nroots]).collect();
    for e in edges(forest) {
        d[e.root_rank][e.root] += 1;
    }
    d
}

/// Multi-root contents after a gather: each root's slots in edge order.
pub fn gather(forest: &[RankGraph], leaves: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let mut per_root: Vec<Vec<Vec<i64>>> = forest.iter().map(|g| vec![Vec::new(); g.nroots]).collect();
    for e in edges(forest) {
        per_root[e.root_rank][e.root].push(leaves[e.leaf_rank][e.leaf]);
    }
    per_root.into_iter().map(|r| r.concat()).collect()
}

/// Random values for every root and leaf slot.
pub fn random_values(seed: u64, forest: &[RankGraph], range: i64) -> (Vec<Vec<i64>>, Vec<Vec<i64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = forest
        .iter()
        .map(|g| (0..g.nroots).map(|_| rng.gen_range(-range..=range)).collect())
        .collect();
    let leaves = forest
        .iter()
        .map(|g| (0..leaf_extent(g)).map(|_| rng.gen_range(-range..=range)).collect())
        .collect();
    (roots, leaves)
}

/// Sets up `forest` on `config.nranks = forest.len()` ranks and runs `body`
/// on each rank's forest.
pub fn on_forest<R, F>(forest: &[RankGraph], config: RunConfig, options: SfOptions, body: F) -> Vec<R>
where
    R: Send + 'static,
    F: Fn(usize, &StarForest) -> starforest::Result<R> + Send + Sync + 'static,
{
    let mut config = config;
    config.nranks = forest.len();
    let forest = forest.to_vec();
    run_ranks(&config, move |ctx| {
        let sf = StarForest::from_graph(&ctx.comm, forest[ctx.rank()].clone(), options.clone())?;
        body(ctx.rank(), &sf)
    })
    .unwrap_or_else(|e| panic!("run failed: {e}"))
}

/// The three-rank example forest with labelled vertices: root `k` of rank
/// `p` is `10 (p + 1) + k + 1`, leaf `k` is `100 (p + 1) + 10 (k + 1)`.
pub fn sample_forest() -> Vec<RankGraph> {
    use starforest::RootRef;
    vec![
        RankGraph {
            nroots: 3,
            leaf_local: Some(vec![0, 1, 2, 3]),
            leaf_remote: vec![RootRef::new(1, 2), RootRef::new(1, 0), RootRef::new(1, 0), RootRef::new(0, 2)],
        },
        RankGraph {
            nroots: 4,
            leaf_local: Some(vec![0, 1, 3]),
            leaf_remote: vec![RootRef::new(2, 0), RootRef::new(0, 0), RootRef::new(2, 1)],
        },
        RankGraph {
            nroots: 2,
            leaf_local: Some(vec![0, 1, 2]),
            leaf_remote: vec![RootRef::new(0, 0), RootRef::new(1, 0), RootRef::new(1, 3)],
        },
    ]
}

pub fn sample_root_labels() -> Vec<Vec<i64>> {
    vec![vec![11, 12, 13], vec![21, 22, 23, 24], vec![31, 32]]
}

pub fn sample_leaf_labels() -> Vec<Vec<i64>> {
    vec![vec![110, 120, 130, 140], vec![210, 220, 230, 240], vec![310, 320, 330]]
}

/// A random graph over given root counts. With `injective`, no root gets
/// more than one leaf.
pub fn random_graph(seed: u64, nroots: &[usize], leaf_space: &[usize], injective: bool) -> Vec<RankGraph> {
    use rand::seq::SliceRandom;
    use starforest::RootRef;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free: Vec<RootRef> = nroots
        .iter()
        .enumerate()
        .flat_map(|(p, &n)| (0..n).map(move |r| RootRef::new(p, r)))
        .collect();
    free.shuffle(&mut rng);
    let all = free.clone();
    leaf_space
        .iter()
        .map(|&space| {
            let mut leaves = Vec::new();
            let mut remote = Vec::new();
            for l in 0..space {
                if all.is_empty() || !rng.gen_bool(0.7) {
                    continue;
                }
                let root = if injective {
                    match free.pop() {
                        Some(r) => r,
                        None => continue,
                    }
                } else {
                    all[rng.gen_range(0..all.len())]
                };
                leaves.push(l);
                remote.push(root);
            }
            RankGraph {
                nroots: 0,
                leaf_local: Some(leaves),
                leaf_remote: remote,
            }
        })
        .zip(nroots)
        .map(|(mut g, &n)| {
            g.nroots = n;
            g
        })
        .collect()
}

/// Edge set of a forest as sorted `(root rank, root, leaf rank, leaf)`.
pub fn edge_set(forest: &[RankGraph]) -> Vec<(usize, usize, usize, usize)> {
    let mut v: Vec<_> = edges(forest)
        .iter()
        .map(|e| (e.root_rank, e.root, e.leaf_rank, e.leaf))
        .collect();
    v.sort_unstable();
    v
}
