//! End-to-end uses of the library: distributed sparse matrix-vector
//! products, submatrix column selection, the ping-pong benchmark, and a
//! randomized self-check.

pub mod matrix;
pub mod pingpong;
pub mod selftest;
pub mod submatrix;
