//! Star-forest graphs.
//!
//! Each rank owns `nroots` roots and a leaf index space. A leaf is connected
//! by naming the `(rank, offset)` of its root; roots never learn about their
//! leaves until [`StarForest::setup`] computes the reverse direction.

mod text;
mod transform;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub use text::{format_forest, parse_corpus, parse_forest};

use crate::error::{Result, SfError};
use crate::packkit::{analyze, ApplyOrder, Extents, IndexPattern};
use crate::sfops::OneSidedState;
use crate::transport::{
    decode_usizes, discover_consensus, discover_dense, encode_usizes, Communicator,
};

/// Address of a root: owning rank and index among that rank's roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RootRef {
    pub rank: usize,
    pub offset: usize,
}

impl RootRef {
    pub fn new(rank: usize, offset: usize) -> Self {
        RootRef { rank, offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfState {
    Created,
    GraphSet,
    SetUp,
}

/// How setup discovers which ranks hold leaves of local roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupAlgorithm {
    /// Allreduce over a communicator-sized count array.
    Dense,
    /// Synchronous sends plus a nonblocking barrier.
    Consensus,
}

impl SetupAlgorithm {
    pub fn default_for(comm: &Communicator) -> Self {
        if comm.size() > comm.consensus_threshold() {
            SetupAlgorithm::Consensus
        } else {
            SetupAlgorithm::Dense
        }
    }
}

/// Per-forest knobs. Set before `setup` to affect derived patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SfOptions {
    /// `None` picks by communicator size.
    pub algorithm: Option<SetupAlgorithm>,
    /// Grid extents of the root / leaf index spaces, enabling strided
    /// pattern detection.
    pub root_extents: Option<Extents>,
    pub leaf_extents: Option<Extents>,
    /// Route edges between a rank and itself through the transport as well.
    pub force_remote: bool,
    /// Checksum the buffers at begin and verify them at end.
    pub verify_buffers: bool,
    /// Application order of reductions and fetch-and-op contributions.
    /// `Sequential` is the deterministic mode.
    pub order: ApplyOrder,
}

impl Default for SfOptions {
    fn default() -> Self {
        SfOptions {
            algorithm: None,
            root_extents: None,
            leaf_extents: None,
            force_remote: false,
            verify_buffers: cfg!(debug_assertions),
            order: ApplyOrder::Sequential,
        }
    }
}

/// One neighbor rank and the local indices of the edges shared with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborList {
    pub rank: usize,
    pub indices: Vec<usize>,
}

/// Neighbor lists derived at setup.
///
/// `root_ranks` lists the ranks owning roots of local leaves, each with the
/// local leaf indices. `leaf_ranks` lists the ranks holding leaves of local
/// roots, each with local root offsets. Both are sorted by rank with the
/// local rank moved to the front; edges within one neighbor follow ascending
/// leaf index on the leaf side, so position `i` on both ends is one edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TwoSidedInfo {
    pub root_ranks: Vec<NeighborList>,
    pub leaf_ranks: Vec<NeighborList>,
    pub self_first: bool,
}

/// Leaf count of every local root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootDegrees {
    pub degree: Vec<usize>,
}

impl RootDegrees {
    pub fn total(&self) -> usize {
        self.degree.iter().sum()
    }
}

/// Local graph of one rank, detached from any communicator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankGraph {
    pub nroots: usize,
    pub leaf_local: Option<Vec<usize>>,
    pub leaf_remote: Vec<RootRef>,
}

impl RankGraph {
    pub fn nleaves(&self) -> usize {
        self.leaf_remote.len()
    }

    pub fn leaf_index(&self, i: usize) -> usize {
        self.leaf_local.as_ref().map_or(i, |l| l[i])
    }

    /// `(leaf index, root)` for every connected leaf.
    pub fn edges(&self) -> impl Iterator<Item = (usize, RootRef)> + '_ {
        self.leaf_remote
            .iter()
            .enumerate()
            .map(|(i, r)| (self.leaf_index(i), *r))
    }

    /// One past the largest connected leaf index.
    pub fn leaf_extent(&self) -> usize {
        self.edges().map(|(l, _)| l + 1).max().unwrap_or(0)
    }
}

/// Derived layout used by the communication operations.
#[derive(Debug)]
pub(crate) struct Plan {
    pub sf_id: u64,
    pub info: TwoSidedInfo,
    pub local_roots: IndexPattern,
    pub local_leaves: IndexPattern,
    /// Remote leaf ranks with edge counts, and per-rank root patterns.
    pub remote_leaf_ranks: Vec<(usize, usize)>,
    pub root_chunks: Vec<IndexPattern>,
    /// Remote root ranks with edge counts, and per-rank leaf patterns.
    pub remote_root_ranks: Vec<(usize, usize)>,
    pub leaf_chunks: Vec<IndexPattern>,
    /// Incoming edges beyond the first at every root.
    pub root_surplus: usize,
    pub seq: AtomicU64,
}

/// Copy and conflict counters of one forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PackStats {
    /// Pack buffers materialized on the root side (bcast send, reduce receive).
    pub root_side: usize,
    /// Pack buffers materialized on the leaf side.
    pub leaf_side: usize,
    /// Contributions dropped by `Replace` onto a root of degree above one.
    pub replace_conflicts: usize,
}

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub root_side: AtomicUsize,
    pub leaf_side: AtomicUsize,
    pub replace_conflicts: AtomicUsize,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// A star forest on one rank.
pub struct StarForest {
    comm: Communicator,
    uid: u64,
    state: SfState,
    graph: RankGraph,
    leaf_contiguous: bool,
    options: SfOptions,
    plan: Option<Plan>,
    pub(crate) counters: Counters,
    pub(crate) multi: Mutex<Option<Arc<StarForest>>>,
    pub(crate) onesided: Mutex<OneSidedState>,
}

impl std::fmt::Debug for StarForest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StarForest")
            .field("rank", &self.comm.rank())
            .field("state", &self.state)
            .field("graph", &self.graph)
            .finish()
    }
}

impl StarForest {
    pub fn create(comm: &Communicator) -> StarForest {
        StarForest {
            comm: comm.clone(),
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            state: SfState::Created,
            graph: RankGraph::default(),
            leaf_contiguous: true,
            options: SfOptions::default(),
            plan: None,
            counters: Counters::default(),
            multi: Mutex::default(),
            onesided: Mutex::default(),
        }
    }

    /// Creates, sets the graph, and sets up in one go (collective).
    pub fn from_graph(comm: &Communicator, graph: RankGraph, options: SfOptions) -> Result<Self> {
        let mut sf = Self::create(comm);
        sf.options = options;
        let set = sf.set_graph(graph.nroots, graph.nleaves(), graph.leaf_local, graph.leaf_remote);
        comm.agree(set)?;
        sf.setup()?;
        Ok(sf)
    }

    pub fn comm(&self) -> &Communicator {
        &self.comm
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn state(&self) -> SfState {
        self.state
    }

    pub fn options(&self) -> &SfOptions {
        &self.options
    }

    pub fn options_mut(&mut self) -> &mut SfOptions {
        &mut self.options
    }

    pub fn nroots(&self) -> usize {
        self.graph.nroots
    }

    /// Number of connected leaves.
    pub fn nleaves(&self) -> usize {
        self.graph.nleaves()
    }

    pub fn graph(&self) -> &RankGraph {
        &self.graph
    }

    /// Whether connected leaves are exactly `0..nleaves` in order.
    pub fn leaf_contiguous(&self) -> bool {
        self.leaf_contiguous
    }

    pub fn leaf_extent(&self) -> usize {
        self.graph.leaf_extent()
    }

    pub fn two_sided(&self) -> Result<&TwoSidedInfo> {
        Ok(&self.plan()?.info)
    }

    pub(crate) fn plan(&self) -> Result<&Plan> {
        self.plan.as_ref().ok_or(SfError::InvalidState {
            found: self.state,
            expected: SfState::SetUp,
        })
    }

    pub fn pack_stats(&self) -> PackStats {
        PackStats {
            root_side: self.counters.root_side.load(Ordering::Relaxed),
            leaf_side: self.counters.leaf_side.load(Ordering::Relaxed),
            replace_conflicts: self.counters.replace_conflicts.load(Ordering::Relaxed),
        }
    }

    pub fn reset_pack_stats(&self) {
        self.counters.root_side.store(0, Ordering::Relaxed);
        self.counters.leaf_side.store(0, Ordering::Relaxed);
        self.counters.replace_conflicts.store(0, Ordering::Relaxed);
    }

    /// Stores the local graph. Leaf indices must be distinct; root ranks must
    /// exist. Root offsets are checked by `setup`.
    pub fn set_graph(
        &mut self,
        nroots: usize,
        nleaves: usize,
        leaf_local: Option<Vec<usize>>,
        leaf_remote: Vec<RootRef>,
    ) -> Result<()> {
        if self.state == SfState::SetUp {
            return Err(SfError::InvalidState {
                found: self.state,
                expected: SfState::GraphSet,
            });
        }
        if leaf_remote.len() != nleaves {
            return Err(SfError::LengthMismatch {
                what: "leaf_remote",
                expected: nleaves,
                got: leaf_remote.len(),
            });
        }
        if let Some(local) = &leaf_local {
            if local.len() != nleaves {
                return Err(SfError::LengthMismatch {
                    what: "leaf_local",
                    expected: nleaves,
                    got: local.len(),
                });
            }
            let mut sorted = local.clone();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(SfError::DuplicateLeaf(w[0]));
            }
        }
        let size = self.comm.size();
        if let Some(r) = leaf_remote.iter().find(|r| r.rank >= size) {
            return Err(SfError::RankOutOfRange { rank: r.rank, size });
        }
        self.leaf_contiguous = leaf_local
            .as_ref()
            .is_none_or(|l| l.iter().enumerate().all(|(i, x)| i == *x));
        self.graph = RankGraph {
            nroots,
            leaf_local,
            leaf_remote,
        };
        self.state = SfState::GraphSet;
        Ok(())
    }

    /// Collective: computes the two-sided information with the algorithm from
    /// the options.
    pub fn setup(&mut self) -> Result<()> {
        let alg = self
            .options
            .algorithm
            .unwrap_or_else(|| SetupAlgorithm::default_for(&self.comm));
        self.setup_with(alg)
    }

    pub fn setup_with(&mut self, algorithm: SetupAlgorithm) -> Result<()> {
        if self.state != SfState::GraphSet {
            return Err(SfError::InvalidState {
                found: self.state,
                expected: SfState::GraphSet,
            });
        }
        let me = self.comm.rank();
        let mut by_rank: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for (leaf, root) in self.graph.edges() {
            by_rank.entry(root.rank).or_default().push((leaf, root.offset));
        }
        for edges in by_rank.values_mut() {
            edges.sort_unstable();
        }
        let targets: Vec<(usize, Vec<u8>)> = by_rank
            .iter()
            .map(|(r, e)| (*r, encode_usizes(&e.iter().map(|x| x.1).collect::<Vec<_>>())))
            .collect();
        let found = match algorithm {
            SetupAlgorithm::Dense => discover_dense(&self.comm, &targets)?,
            SetupAlgorithm::Consensus => discover_consensus(&self.comm, &targets)?,
        };
        let nroots = self.graph.nroots;
        let mut leaf_ranks = Vec::with_capacity(found.len());
        let mut bad = None;
        for (q, payload) in found {
            let offsets = decode_usizes(&payload);
            if let Some(&o) = offsets.iter().find(|o| **o >= nroots) {
                bad.get_or_insert(o);
            }
            leaf_ranks.push(NeighborList {
                rank: q,
                indices: offsets,
            });
        }
        let checked = match bad {
            Some(offset) => Err(SfError::RootOffsetOutOfRange {
                rank: me,
                offset,
                nroots,
            }),
            None => Ok(()),
        };
        self.comm.agree(checked)?;
        let mut root_ranks: Vec<NeighborList> = by_rank
            .into_iter()
            .map(|(rank, e)| NeighborList {
                rank,
                indices: e.into_iter().map(|x| x.0).collect(),
            })
            .collect();
        let self_first = |v: &mut Vec<NeighborList>| v.sort_by_key(|n| (n.rank != me, n.rank));
        self_first(&mut root_ranks);
        self_first(&mut leaf_ranks);
        let info = TwoSidedInfo {
            self_first: root_ranks.first().is_some_and(|n| n.rank == me),
            root_ranks,
            leaf_ranks,
        };
        let sf_id = self.comm.next_sf_id();
        self.plan = Some(self.build_plan(sf_id, info));
        self.state = SfState::SetUp;
        Ok(())
    }

    fn build_plan(&self, sf_id: u64, info: TwoSidedInfo) -> Plan {
        let me = self.comm.rank();
        let local = !self.options.force_remote;
        let is_local = |n: &&NeighborList| local && n.rank == me;
        let (root_ext, leaf_ext) = (self.options.root_extents, self.options.leaf_extents);
        let pat = |v: &[usize], ext| analyze(Some(v), v.len(), ext);
        let empty = IndexPattern::Contiguous { start: 0, count: 0 };
        let local_roots = info
            .leaf_ranks
            .iter()
            .find(is_local)
            .map_or(empty.clone(), |n| pat(&n.indices, root_ext));
        let local_leaves = info
            .root_ranks
            .iter()
            .find(is_local)
            .map_or(empty, |n| pat(&n.indices, leaf_ext));
        let remote_leaf: Vec<&NeighborList> =
            info.leaf_ranks.iter().filter(|n| !is_local(n)).collect();
        let remote_root: Vec<&NeighborList> =
            info.root_ranks.iter().filter(|n| !is_local(n)).collect();
        let mut incidence = vec![0usize; self.graph.nroots];
        for n in &info.leaf_ranks {
            for &r in &n.indices {
                incidence[r] += 1;
            }
        }
        Plan {
            sf_id,
            local_roots,
            local_leaves,
            remote_leaf_ranks: remote_leaf.iter().map(|n| (n.rank, n.indices.len())).collect(),
            root_chunks: remote_leaf.iter().map(|n| pat(&n.indices, root_ext)).collect(),
            remote_root_ranks: remote_root.iter().map(|n| (n.rank, n.indices.len())).collect(),
            leaf_chunks: remote_root.iter().map(|n| pat(&n.indices, leaf_ext)).collect(),
            root_surplus: incidence.iter().map(|d| d.saturating_sub(1)).sum(),
            info,
            seq: AtomicU64::new(0),
        }
    }

    /// A fresh forest on the same communicator with the same options.
    pub(crate) fn derived(&self, graph: RankGraph) -> Result<StarForest> {
        let mut options = self.options.clone();
        options.leaf_extents = None;
        options.root_extents = None;
        StarForest::from_graph(&self.comm, graph, options)
    }
}
