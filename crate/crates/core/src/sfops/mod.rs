//! Split-phase operations over a star forest.
//!
//! Every operation is a `*_begin` returning an [`OpHandle`] and a matching
//! `*_end` consuming it. Edges between a rank and itself are applied with a
//! direct scatter inside `begin`; remote edges are packed and handed to the
//! transport in `begin` and unpacked in `end`. The caller passes the same
//! buffers to both halves and must not modify them in between.

mod exchange;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::atomic::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) use exchange::OneSidedState;
use exchange::{Flow, Pending};

use crate::error::{Result, SfError};
use crate::packkit::{pack, scatter, unpack_wire, ApplyOrder, IndexPattern};
use crate::scalar::{Element, ReduceOp, Unit};
use crate::sfgraph::{Plan, RootDegrees, StarForest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Bcast,
    Reduce,
    FetchAndOp,
    Gather,
    Scatter,
}

/// Where the wire buffers of an operation live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferSpace {
    /// Transport-owned message buffers.
    User,
    /// Collectively allocated symmetric-heap objects (one-sided backend).
    Symmetric,
}

/// An operation between `begin` and `end`.
#[derive(Debug)]
#[must_use = "every begun operation must be ended"]
pub struct OpHandle {
    kind: OpKind,
    unit: Unit,
    op: ReduceOp,
    sf_uid: u64,
    seq: u64,
    pending: Pending,
    checksum: Option<u64>,
}

impl OpHandle {
    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn op(&self) -> ReduceOp {
        self.op
    }

    pub fn space(&self) -> BufferSpace {
        match self.pending {
            Pending::OneSided { .. } => BufferSpace::Symmetric,
            _ => BufferSpace::User,
        }
    }
}

fn checksum<T: Element>(parts: &[&[T]]) -> u64 {
    let mut h = DefaultHasher::new();
    let mut bytes = Vec::new();
    for p in parts {
        bytes.clear();
        T::encode_slice(p, &mut bytes);
        h.write_usize(p.len());
        h.write(&bytes);
    }
    h.finish()
}

fn need(what: &'static str, needed: usize, got: usize) -> Result<()> {
    if got < needed {
        return Err(SfError::BufferTooSmall { what, needed, got });
    }
    Ok(())
}

fn mix(seed: u64, seq: u64, rank: usize) -> u64 {
    seed ^ seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (rank as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

impl StarForest {
    fn order_for(&self, seq: u64) -> ApplyOrder {
        match self.options().order {
            ApplyOrder::Sequential => ApplyOrder::Sequential,
            ApplyOrder::Shuffled(s) => ApplyOrder::Shuffled(mix(s, seq, self.comm().rank())),
        }
    }

    fn next_seq(&self, plan: &Plan, n: u64) -> u64 {
        plan.seq.fetch_add(n, Ordering::Relaxed)
    }

    fn check_handle(&self, h: &OpHandle, kind: OpKind) -> Result<()> {
        if h.kind != kind || h.sf_uid != self.uid() {
            return Err(SfError::Precondition(format!(
                "{:?} handle passed to {kind:?} end of another forest or operation",
                h.kind
            )));
        }
        Ok(())
    }

    fn verify<T: Element>(&self, h: &OpHandle, parts: &[&[T]]) -> Result<()> {
        match h.checksum {
            Some(c) if c != checksum(parts) => Err(SfError::BufferMutated),
            _ => Ok(()),
        }
    }

    fn sides<'p>(plan: &'p Plan, flow: Flow) -> Sides<'p> {
        match flow {
            Flow::RootToLeaf => Sides {
                src_local: &plan.local_roots,
                dst_local: &plan.local_leaves,
                src_chunks: &plan.root_chunks,
                dst_chunks: &plan.leaf_chunks,
            },
            Flow::LeafToRoot => Sides {
                src_local: &plan.local_leaves,
                dst_local: &plan.local_roots,
                src_chunks: &plan.leaf_chunks,
                dst_chunks: &plan.root_chunks,
            },
        }
    }

    fn count_copies(&self, flow: Flow, sending: bool, n: usize) {
        if n == 0 {
            return;
        }
        let root_side = matches!(
            (flow, sending),
            (Flow::RootToLeaf, true) | (Flow::LeafToRoot, false)
        );
        let c = if root_side {
            &self.counters.root_side
        } else {
            &self.counters.leaf_side
        };
        c.fetch_add(n, Ordering::Relaxed);
    }

    /// Packs `src` for every remote neighbor of `flow` and starts the transfer.
    fn post<T: Element>(
        &self,
        plan: &Plan,
        flow: Flow,
        seq: u64,
        unit: Unit,
        src: &[T],
        chunks: &[IndexPattern],
    ) -> Result<Pending> {
        let mut payloads = Vec::with_capacity(chunks.len());
        let mut copies = 0;
        for pat in chunks {
            let packed = pack(src, pat, unit.blocklen)?;
            copies += usize::from(matches!(packed, std::borrow::Cow::Owned(_)));
            let mut bytes = Vec::with_capacity(packed.len() * T::SIZE);
            T::encode_slice(&packed, &mut bytes);
            payloads.push(bytes);
        }
        self.count_copies(flow, true, copies);
        self.start_exchange(plan, flow, seq, unit.bytes::<T>(), payloads)
    }

    /// Completes the transfer and applies every received chunk to `dst`.
    #[allow(clippy::too_many_arguments)]
    fn land<T: Element>(
        &self,
        plan: &Plan,
        flow: Flow,
        pending: Pending,
        unit: Unit,
        dst: &mut [T],
        chunks: &[IndexPattern],
        op: ReduceOp,
        order: ApplyOrder,
    ) -> Result<()> {
        let received = self.finish_exchange(plan, pending)?;
        let mut copies = 0;
        for (bytes, pat) in received.iter().zip(chunks) {
            let (_, staged) = unpack_wire(dst, pat, unit.blocklen, op, bytes, order)?;
            copies += usize::from(staged);
        }
        self.count_copies(flow, false, copies);
        Ok(())
    }

    fn begin_flow<T: Element>(
        &self,
        kind: OpKind,
        flow: Flow,
        unit: Unit,
        op: ReduceOp,
        src: &[T],
        dst: &mut [T],
    ) -> Result<OpHandle> {
        unit.validate::<T>(op)?;
        let plan = self.plan()?;
        let (src_n, dst_n) = match flow {
            Flow::RootToLeaf => (self.nroots(), self.leaf_extent()),
            Flow::LeafToRoot => (self.leaf_extent(), self.nroots()),
        };
        need("source data", src_n * unit.blocklen, src.len())?;
        need("destination data", dst_n * unit.blocklen, dst.len())?;
        let seq = self.next_seq(plan, 1);
        let sides = Self::sides(plan, flow);
        let pending = self.post(plan, flow, seq, unit, src, sides.src_chunks)?;
        scatter(
            src,
            sides.src_local,
            dst,
            sides.dst_local,
            unit.blocklen,
            op,
            self.order_for(seq),
        )?;
        if flow == Flow::LeafToRoot && op == ReduceOp::Replace {
            self.counters
                .replace_conflicts
                .fetch_add(plan.root_surplus, Ordering::Relaxed);
        }
        Ok(OpHandle {
            kind,
            unit,
            op,
            sf_uid: self.uid(),
            seq,
            pending,
            checksum: self.options().verify_buffers.then(|| checksum(&[src, &*dst])),
        })
    }

    fn end_flow<T: Element>(
        &self,
        kind: OpKind,
        flow: Flow,
        h: OpHandle,
        src: &[T],
        dst: &mut [T],
    ) -> Result<()> {
        self.check_handle(&h, kind)?;
        h.unit.validate::<T>(h.op)?;
        self.verify(&h, &[src, &*dst])?;
        let plan = self.plan()?;
        let sides = Self::sides(plan, flow);
        self.land(
            plan,
            flow,
            h.pending,
            h.unit,
            dst,
            sides.dst_chunks,
            h.op,
            self.order_for(h.seq),
        )
    }

    /// Starts `leafdata[l] ⊕= rootdata[root(l)]` on every edge.
    pub fn bcast_begin<T: Element>(
        &self,
        unit: Unit,
        rootdata: &[T],
        leafdata: &mut [T],
        op: ReduceOp,
    ) -> Result<OpHandle> {
        self.begin_flow(OpKind::Bcast, Flow::RootToLeaf, unit, op, rootdata, leafdata)
    }

    pub fn bcast_end<T: Element>(&self, h: OpHandle, rootdata: &[T], leafdata: &mut [T]) -> Result<()> {
        self.end_flow(OpKind::Bcast, Flow::RootToLeaf, h, rootdata, leafdata)
    }

    pub fn bcast<T: Element>(
        &self,
        unit: Unit,
        rootdata: &[T],
        leafdata: &mut [T],
        op: ReduceOp,
    ) -> Result<()> {
        let h = self.bcast_begin(unit, rootdata, leafdata, op)?;
        self.bcast_end(h, rootdata, leafdata)
    }

    /// Starts `rootdata[r] ⊕= leafdata[l]` for every leaf `l` of `r`.
    pub fn reduce_begin<T: Element>(
        &self,
        unit: Unit,
        leafdata: &[T],
        rootdata: &mut [T],
        op: ReduceOp,
    ) -> Result<OpHandle> {
        self.begin_flow(OpKind::Reduce, Flow::LeafToRoot, unit, op, leafdata, rootdata)
    }

    pub fn reduce_end<T: Element>(&self, h: OpHandle, leafdata: &[T], rootdata: &mut [T]) -> Result<()> {
        self.end_flow(OpKind::Reduce, Flow::LeafToRoot, h, leafdata, rootdata)
    }

    pub fn reduce<T: Element>(
        &self,
        unit: Unit,
        leafdata: &[T],
        rootdata: &mut [T],
        op: ReduceOp,
    ) -> Result<()> {
        let h = self.reduce_begin(unit, leafdata, rootdata, op)?;
        self.reduce_end(h, leafdata, rootdata)
    }

    /// Starts a fetch-and-op: every leaf contributes `leafdata[l]` to its
    /// root and receives in `leafupdate[l]` the root value just before its
    /// own contribution was applied.
    pub fn fetch_and_op_begin<T: Element>(
        &self,
        unit: Unit,
        rootdata: &[T],
        leafdata: &[T],
        leafupdate: &[T],
        op: ReduceOp,
    ) -> Result<OpHandle> {
        unit.validate::<T>(op)?;
        if op == ReduceOp::Replace {
            return Err(SfError::Precondition(
                "fetch-and-op requires a combining reduction, not Replace".into(),
            ));
        }
        let plan = self.plan()?;
        let bl = unit.blocklen;
        need("root data", self.nroots() * bl, rootdata.len())?;
        need("leaf data", self.leaf_extent() * bl, leafdata.len())?;
        need("leaf update", self.leaf_extent() * bl, leafupdate.len())?;
        let seq = self.next_seq(plan, 2);
        let pending = self.post(plan, Flow::LeafToRoot, seq, unit, leafdata, &plan.leaf_chunks)?;
        Ok(OpHandle {
            kind: OpKind::FetchAndOp,
            unit,
            op,
            sf_uid: self.uid(),
            seq,
            pending,
            checksum: self
                .options()
                .verify_buffers
                .then(|| checksum(&[rootdata, leafdata, leafupdate])),
        })
    }

    pub fn fetch_and_op_end<T: Element>(
        &self,
        h: OpHandle,
        rootdata: &mut [T],
        leafdata: &[T],
        leafupdate: &mut [T],
    ) -> Result<()> {
        let order = self.order_for(h.seq);
        self.fetch_and_op_end_with(h, rootdata, leafdata, leafupdate, order)
    }

    pub(crate) fn fetch_and_op_end_with<T: Element>(
        &self,
        h: OpHandle,
        rootdata: &mut [T],
        leafdata: &[T],
        leafupdate: &mut [T],
        order: ApplyOrder,
    ) -> Result<()> {
        self.check_handle(&h, OpKind::FetchAndOp)?;
        h.unit.validate::<T>(h.op)?;
        self.verify(&h, &[&*rootdata, leafdata, &*leafupdate])?;
        let plan = self.plan()?;
        let bl = h.unit.blocklen;
        let received: Vec<Vec<T>> = self
            .finish_exchange(plan, h.pending)?
            .into_iter()
            .map(|bytes| {
                let mut v = vec![T::default(); bytes.len() / T::SIZE];
                T::decode_slice(&bytes, &mut v);
                v
            })
            .collect();

        // Contribution sources: local edge i, or entry k of remote chunk j.
        #[derive(Clone, Copy)]
        enum From {
            Local(usize),
            Remote(usize, usize),
        }
        let mut contributions: Vec<(usize, From)> = (0..plan.local_roots.len())
            .map(|i| (plan.local_roots.index(i), From::Local(i)))
            .collect();
        for (j, pat) in plan.root_chunks.iter().enumerate() {
            contributions.extend((0..pat.len()).map(|k| (pat.index(k), From::Remote(j, k))));
        }
        if let ApplyOrder::Shuffled(seed) = order {
            contributions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let mut replies: Vec<Vec<T>> = received.iter().map(|c| vec![T::default(); c.len()]).collect();
        for (root, from) in contributions {
            let r = root * bl;
            let (value, fetched): (&[T], &mut [T]) = match from {
                From::Local(i) => {
                    let l = plan.local_leaves.index(i) * bl;
                    (&leafdata[l..l + bl], &mut leafupdate[l..l + bl])
                }
                From::Remote(j, k) => (&received[j][k * bl..(k + 1) * bl], &mut replies[j][k * bl..(k + 1) * bl]),
            };
            fetched.copy_from_slice(&rootdata[r..r + bl]);
            for (acc, v) in rootdata[r..r + bl].iter_mut().zip(value) {
                *acc = T::combine(h.op, *acc, *v);
            }
        }
        let payloads = replies
            .iter()
            .map(|v| {
                let mut b = Vec::with_capacity(v.len() * T::SIZE);
                T::encode_slice(v, &mut b);
                b
            })
            .collect();
        let pending =
            self.start_exchange(plan, Flow::RootToLeaf, h.seq + 1, h.unit.bytes::<T>(), payloads)?;
        self.land(
            plan,
            Flow::RootToLeaf,
            pending,
            h.unit,
            leafupdate,
            &plan.leaf_chunks,
            ReduceOp::Replace,
            ApplyOrder::Sequential,
        )
    }

    pub fn fetch_and_op<T: Element>(
        &self,
        unit: Unit,
        rootdata: &mut [T],
        leafdata: &[T],
        leafupdate: &mut [T],
        op: ReduceOp,
    ) -> Result<()> {
        let h = self.fetch_and_op_begin(unit, rootdata, leafdata, leafupdate, op)?;
        self.fetch_and_op_end(h, rootdata, leafdata, leafupdate)
    }

    /// Starts collecting every leaf value at its root, one slot per leaf, in
    /// the layout of the multi-forest.
    pub fn gather_begin<T: Element>(
        &self,
        unit: Unit,
        leafdata: &[T],
        multirootdata: &mut [T],
    ) -> Result<OpHandle> {
        let multi = self.multi_sf()?;
        let mut h = multi.begin_flow(
            OpKind::Gather,
            Flow::LeafToRoot,
            unit,
            ReduceOp::Replace,
            leafdata,
            multirootdata,
        )?;
        h.sf_uid = self.uid();
        Ok(h)
    }

    pub fn gather_end<T: Element>(
        &self,
        mut h: OpHandle,
        leafdata: &[T],
        multirootdata: &mut [T],
    ) -> Result<()> {
        self.check_handle(&h, OpKind::Gather)?;
        let multi = self.multi_sf()?;
        h.sf_uid = multi.uid();
        multi.end_flow(OpKind::Gather, Flow::LeafToRoot, h, leafdata, multirootdata)
    }

    pub fn gather<T: Element>(&self, unit: Unit, leafdata: &[T], multirootdata: &mut [T]) -> Result<()> {
        let h = self.gather_begin(unit, leafdata, multirootdata)?;
        self.gather_end(h, leafdata, multirootdata)
    }

    /// Inverse of gather: sends each multi-root slot back to its leaf.
    pub fn scatter_begin<T: Element>(
        &self,
        unit: Unit,
        multirootdata: &[T],
        leafdata: &mut [T],
    ) -> Result<OpHandle> {
        let multi = self.multi_sf()?;
        let mut h = multi.begin_flow(
            OpKind::Scatter,
            Flow::RootToLeaf,
            unit,
            ReduceOp::Replace,
            multirootdata,
            leafdata,
        )?;
        h.sf_uid = self.uid();
        Ok(h)
    }

    pub fn scatter_end<T: Element>(
        &self,
        mut h: OpHandle,
        multirootdata: &[T],
        leafdata: &mut [T],
    ) -> Result<()> {
        self.check_handle(&h, OpKind::Scatter)?;
        let multi = self.multi_sf()?;
        h.sf_uid = multi.uid();
        multi.end_flow(OpKind::Scatter, Flow::RootToLeaf, h, multirootdata, leafdata)
    }

    pub fn scatter<T: Element>(&self, unit: Unit, multirootdata: &[T], leafdata: &mut [T]) -> Result<()> {
        let h = self.scatter_begin(unit, multirootdata, leafdata)?;
        self.scatter_end(h, multirootdata, leafdata)
    }

    /// Collective: number of leaves attached to every local root.
    pub fn compute_degrees(&self) -> Result<RootDegrees> {
        let ones = vec![1i64; self.leaf_extent()];
        let mut deg = vec![0i64; self.nroots()];
        self.reduce(Unit::scalar::<i64>(), &ones, &mut deg, ReduceOp::Sum)?;
        Ok(RootDegrees {
            degree: deg.into_iter().map(|d| d as usize).collect(),
        })
    }
}

struct Sides<'p> {
    src_local: &'p IndexPattern,
    dst_local: &'p IndexPattern,
    src_chunks: &'p [IndexPattern],
    dst_chunks: &'p [IndexPattern],
}
