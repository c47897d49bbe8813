//! Column selection for extracting a submatrix.
//!
//! The selected global columns are distributed over the ranks (each rank
//! lists some of them). The `k`-th selected column overall gets new index
//! `k`. Two forest operations decide which reduced off-diagonal columns of
//! each rank survive:
//!
//! 1. a reduce through `sf_b` (selection entries to their global columns)
//!    writes the new index of every selected column into an array over the
//!    column space, pre-filled with `-1`;
//! 2. a bcast through `sf_a` (reduced columns to their global columns)
//!    brings those values to the reduced column space.

use crate::error::{Result, SfError};
use crate::scalar::{ReduceOp, Unit};
use crate::sfgraph::{RankGraph, RootRef, SfOptions, StarForest};
use crate::transport::Communicator;

use super::matrix::Layout;

/// Marks columns that are not selected.
pub const UNSELECTED: i64 = -1;

/// Collective: the forest from this rank's selected columns (leaves, in list
/// order) to their owners under `cols`, and the new index of this rank's
/// first selected column.
pub fn column_selection_sf(
    comm: &Communicator,
    cols: &Layout,
    selected: &[usize],
) -> Result<(StarForest, usize)> {
    let remote: Result<Vec<RootRef>> = selected
        .iter()
        .map(|&g| {
            cols.owner(g)
                .map(|(r, o)| RootRef::new(r, o))
                .ok_or(SfError::IndexOutOfBounds {
                    index: g,
                    len: cols.global_size(),
                })
        })
        .collect();
    let remote = comm.agree(remote)?;
    let mut counts = vec![0i64; comm.size()];
    counts[comm.rank()] = selected.len() as i64;
    let counts = comm.allreduce_sum(&counts)?;
    let first = counts[..comm.rank()].iter().sum::<i64>() as usize;
    let sf = StarForest::from_graph(
        comm,
        RankGraph {
            nroots: cols.local_size(comm.rank()),
            leaf_local: None,
            leaf_remote: remote,
        },
        SfOptions::default(),
    )?;
    Ok((sf, first))
}

/// Collective: new column index of every leaf of `sf_a`, or [`UNSELECTED`].
///
/// `sf_a` and `sf_b` must share the root space (the global columns). A column
/// selected more than once keeps its largest new index.
pub fn select_submatrix_columns(
    sf_a: &StarForest,
    sf_b: &StarForest,
    first_new_index: usize,
) -> Result<Vec<i64>> {
    if sf_a.nroots() != sf_b.nroots() {
        return Err(SfError::LengthMismatch {
            what: "column space of the two forests",
            expected: sf_a.nroots(),
            got: sf_b.nroots(),
        });
    }
    let unit = Unit::scalar::<i64>();
    let new_index: Vec<i64> = (0..sf_b.leaf_extent())
        .map(|k| (first_new_index + k) as i64)
        .collect();
    let mut tagged = vec![UNSELECTED; sf_b.nroots()];
    sf_b.reduce(unit, &new_index, &mut tagged, ReduceOp::Max)?;
    let mut out = vec![UNSELECTED; sf_a.leaf_extent()];
    sf_a.bcast(unit, &tagged, &mut out, ReduceOp::Replace)?;
    Ok(out)
}
