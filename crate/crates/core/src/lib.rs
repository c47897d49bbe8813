//! Star-forest communication graphs.
//!
//! A star forest describes a sparse communication pattern: each rank owns
//! roots (data it holds) and leaves (data it needs), and every leaf names its
//! root as `(rank, offset)`. After a collective setup, the forest supports
//! split-phase broadcast, reduce, fetch-and-op, gather and scatter over
//! in-process threads, local TCP sockets, or an emulated one-sided
//! put/signal transport.
//!
//! ```
//! use starforest::{run_ranks, ReduceOp, RootRef, RunConfig, SfOptions, StarForest, RankGraph, Unit};
//!
//! // Rank 1 has one leaf attached to root 0 of rank 0.
//! let out = run_ranks(&RunConfig::new(2), |ctx| {
//!     let graph = if ctx.rank() == 0 {
//!         RankGraph { nroots: 1, leaf_local: None, leaf_remote: vec![] }
//!     } else {
//!         RankGraph { nroots: 0, leaf_local: None, leaf_remote: vec![RootRef::new(0, 0)] }
//!     };
//!     let sf = StarForest::from_graph(&ctx.comm, graph, SfOptions::default())?;
//!     let roots = vec![42i64; sf.nroots()];
//!     let mut leaves = vec![0i64; sf.leaf_extent()];
//!     sf.bcast(Unit::scalar::<i64>(), &roots, &mut leaves, ReduceOp::Replace)?;
//!     Ok(leaves)
//! })
//! .unwrap();
//! assert_eq!(out[1], vec![42]);
//! ```

pub mod demos;
pub mod error;
pub mod harness;
pub mod packkit;
pub mod scalar;
pub mod sfgraph;
pub mod sfops;
pub mod symheap;
pub mod transport;

pub use demos::matrix::{GhostVector, Layout, SplitMatrix};
pub use error::{Result, SfError};
pub use harness::{random_forest, random_sf, run_ranks, HarnessError, RankContext, RunConfig};
pub use packkit::{ApplyOrder, Extents, IndexPattern};
pub use scalar::{Byte, Element, ElementKind, ReduceOp, Scalar, Unit};
pub use sfgraph::{
    NeighborList, PackStats, RankGraph, RootDegrees, RootRef, SetupAlgorithm, SfOptions, SfState,
    StarForest, TwoSidedInfo,
};
pub use sfops::{BufferSpace, OpHandle, OpKind};
pub use transport::{Backend, CommOptions, Communicator};

pub type SplitMatrixF64 = SplitMatrix<f64>;
pub type SplitMatrixI64 = SplitMatrix<i64>;
pub type GhostVectorF64 = GhostVector<f64>;
pub type GhostVectorI64 = GhostVector<i64>;
