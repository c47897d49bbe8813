//! Forests derived from other forests. Every function here is collective.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::{RankGraph, RootRef, StarForest};
use crate::error::{Result, SfError};
use crate::packkit::ApplyOrder;
use crate::scalar::{ReduceOp, Unit};

/// Marker for "no root reached this vertex".
const NONE: i64 = -1;

fn root_ids(sf: &StarForest) -> Vec<i64> {
    let me = sf.comm().rank() as i64;
    (0..sf.nroots() as i64).flat_map(|r| [me, r]).collect()
}

fn to_ref(pair: &[i64]) -> Option<RootRef> {
    (pair[0] >= 0).then(|| RootRef::new(pair[0] as usize, pair[1] as usize))
}

impl StarForest {
    /// The multi-forest: every root of degree `d` becomes `d` roots of degree
    /// one, numbered per root in edge order (leaf rank with the local rank
    /// first, then position within that rank). Built once and cached.
    pub fn multi_sf(&self) -> Result<Arc<StarForest>> {
        let mut cache = self.multi.lock().unwrap();
        if let Some(m) = cache.as_ref() {
            return Ok(m.clone());
        }
        let degrees = self.compute_degrees()?;
        let mut first = Vec::with_capacity(self.nroots());
        let mut total = 0i64;
        for d in &degrees.degree {
            first.push(total);
            total += *d as i64;
        }
        let ones = vec![1i64; self.leaf_extent()];
        let mut slot = vec![0i64; self.leaf_extent()];
        let unit = Unit::scalar::<i64>();
        let h = self.fetch_and_op_begin(unit, &first, &ones, &slot, ReduceOp::Sum)?;
        self.fetch_and_op_end_with(h, &mut first, &ones, &mut slot, ApplyOrder::Sequential)?;
        let g = self.graph();
        let graph = RankGraph {
            nroots: total as usize,
            leaf_local: Some(g.edges().map(|(l, _)| l).collect()),
            leaf_remote: g
                .edges()
                .map(|(l, r)| RootRef::new(r.rank, slot[l] as usize))
                .collect(),
        };
        let multi = Arc::new(self.derived(graph)?);
        *cache = Some(multi.clone());
        Ok(multi)
    }

    /// `self` followed by `b`: roots of `self`, leaves of `b`. A leaf of `b`
    /// is connected when its root (a vertex of `self`'s leaf space) is a
    /// connected leaf of `self`; vertices outside that overlap carry no edge.
    pub fn compose(&self, b: &StarForest) -> Result<StarForest> {
        let comm = self.comm();
        if !comm.same_group(b.comm()) {
            return Err(SfError::Precondition("compose needs forests on one communicator".into()));
        }
        let fits = if self.leaf_extent() > b.nroots() {
            Err(SfError::LengthMismatch {
                what: "leaf space of the first forest vs roots of the second",
                expected: b.nroots(),
                got: self.leaf_extent(),
            })
        } else {
            Ok(())
        };
        comm.agree(fits)?;
        let unit = Unit::of::<i64>(2);
        let mut mid = vec![NONE; 2 * b.nroots()];
        self.bcast(unit, &root_ids(self), &mut mid, ReduceOp::Replace)?;
        let mut reached = vec![NONE; 2 * b.leaf_extent()];
        b.bcast(unit, &mid, &mut reached, ReduceOp::Replace)?;
        let (leaf_local, leaf_remote) = b
            .graph()
            .edges()
            .filter_map(|(l, _)| to_ref(&reached[2 * l..2 * l + 2]).map(|r| (l, r)))
            .unzip();
        self.derived(RankGraph {
            nroots: self.nroots(),
            leaf_local: Some(leaf_local),
            leaf_remote,
        })
    }

    /// Roots of `self`, leaves at the roots of `b`: root `r` of `self`
    /// connects to root `s` of `b` when some vertex of the shared leaf space
    /// is a leaf of both. Every root of `b` must have degree at most one.
    pub fn compose_inverse(&self, b: &StarForest) -> Result<StarForest> {
        let comm = self.comm();
        if !comm.same_group(b.comm()) {
            return Err(SfError::Precondition(
                "compose_inverse needs forests on one communicator".into(),
            ));
        }
        let degrees = b.compute_degrees()?;
        let ok = match degrees.degree.iter().position(|d| *d > 1) {
            Some(r) => Err(SfError::Precondition(format!(
                "root {r} of the second forest has degree {}",
                degrees.degree[r]
            ))),
            None => Ok(()),
        };
        comm.agree(ok)?;
        let unit = Unit::of::<i64>(2);
        let extent = self.leaf_extent().max(b.leaf_extent());
        let mut shared = vec![NONE; 2 * extent];
        self.bcast(unit, &root_ids(self), &mut shared, ReduceOp::Replace)?;
        let mut at_b = vec![NONE; 2 * b.nroots()];
        b.reduce(unit, &shared, &mut at_b, ReduceOp::Replace)?;
        let (leaf_local, leaf_remote) = (0..b.nroots())
            .filter_map(|s| to_ref(&at_b[2 * s..2 * s + 2]).map(|r| (s, r)))
            .unzip();
        self.derived(RankGraph {
            nroots: self.nroots(),
            leaf_local: Some(leaf_local),
            leaf_remote,
        })
    }

    /// Keeps only edges whose root is selected. Index spaces are unchanged.
    pub fn embed_root(&self, selected: &[usize]) -> Result<StarForest> {
        let n = self.nroots();
        let check = match selected.iter().find(|r| **r >= n) {
            Some(&index) => Err(SfError::IndexOutOfBounds { index, len: n }),
            None => Ok(()),
        };
        self.comm().agree(check)?;
        let mut mask = vec![0i64; n];
        for r in selected {
            mask[*r] = 1;
        }
        let mut keep = vec![0i64; self.leaf_extent()];
        self.bcast(Unit::scalar::<i64>(), &mask, &mut keep, ReduceOp::Replace)?;
        let (leaf_local, leaf_remote) = self
            .graph()
            .edges()
            .filter(|(l, _)| keep[*l] == 1)
            .unzip();
        self.derived(RankGraph {
            nroots: n,
            leaf_local: Some(leaf_local),
            leaf_remote,
        })
    }

    /// Keeps only edges whose leaf is selected.
    pub fn embed_leaf(&self, selected: &[usize]) -> Result<StarForest> {
        let n = self.leaf_extent();
        let check = match selected.iter().find(|l| **l >= n) {
            Some(&index) => Err(SfError::IndexOutOfBounds { index, len: n }),
            None => Ok(()),
        };
        self.comm().agree(check)?;
        let keep: BTreeSet<usize> = selected.iter().copied().collect();
        let (leaf_local, leaf_remote) = self
            .graph()
            .edges()
            .filter(|(l, _)| keep.contains(l))
            .unzip();
        self.derived(RankGraph {
            nroots: self.nroots(),
            leaf_local: Some(leaf_local),
            leaf_remote,
        })
    }
}
