//! Row-distributed sparse matrices split into a diagonal block `A` and an
//! off-diagonal block `B`, and the ghost exchange behind `y = A x + B x`.

use std::collections::BTreeSet;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SfError};
use crate::scalar::{ReduceOp, Scalar, Unit};
use crate::sfgraph::{RankGraph, RootRef, SfOptions, StarForest};
use crate::transport::tags::{self, Phase};
use crate::transport::Communicator;

/// Contiguous blocks of a global index range, one per rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    starts: Vec<usize>,
}

impl Layout {
    /// `n` indices over `nranks` ranks, sizes differing by at most one.
    pub fn balanced(n: usize, nranks: usize) -> Self {
        let sizes: Vec<usize> = (0..nranks)
            .map(|r| n / nranks + usize::from(r < n % nranks))
            .collect();
        Self::from_sizes(&sizes)
    }

    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut starts = vec![0];
        for s in sizes {
            starts.push(starts.last().unwrap() + s);
        }
        Layout { starts }
    }

    pub fn nranks(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn global_size(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.starts[rank]..self.starts[rank + 1]
    }

    pub fn local_size(&self, rank: usize) -> usize {
        self.range(rank).len()
    }

    /// Owning rank and local index of global index `g`.
    pub fn owner(&self, g: usize) -> Option<(usize, usize)> {
        if g >= self.global_size() {
            return None;
        }
        let r = self.starts.partition_point(|s| *s <= g) - 1;
        Some((r, g - self.starts[r]))
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut csr = Csr {
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for row in rows {
            for (c, v) in row {
                csr.cols.push(c);
                csr.vals.push(v);
            }
            csr.row_ptr.push(csr.cols.len());
        }
        csr
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `y += self * x`
    pub fn mul_add(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows()) {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                *yi += self.vals[k] * x[self.cols[k]];
            }
        }
    }

    /// `y += selfᵀ * x`
    pub fn transpose_mul_add(&self, x: &[T], y: &mut [T]) {
        for (i, xi) in x.iter().enumerate().take(self.nrows()) {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k] * *xi;
            }
        }
    }
}

/// A global matrix as `(row, col, value)` triplets, zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar + FromStr> CooMatrix<T> {
    /// Reads a Matrix Market `coordinate` file (`general` or `symmetric`;
    /// `pattern` entries become ones).
    pub fn parse_matrix_market(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: &str| SfError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let h: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
        if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
            return Err(err(0, "expected a MatrixMarket matrix coordinate header"));
        }
        let pattern = h[3] == "pattern";
        let symmetric = match h[4].as_str() {
            "general" => false,
            "symmetric" => true,
            other => return Err(err(0, &format!("unsupported symmetry {other}"))),
        };
        let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('%'));
        let (i, size_line) = body.next().ok_or_else(|| err(0, "missing size line"))?;
        let dims: Vec<usize> = size_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(i, "bad size line")))
            .collect::<Result<_>>()?;
        let [nrows, ncols, nnz] = dims[..] else {
            return Err(err(i, "size line needs three integers"));
        };
        let mut entries = Vec::with_capacity(nnz);
        for (i, line) in body {
            let mut t = line.split_whitespace();
            let mut index = |limit: usize| -> Result<usize> {
                let v: usize = t
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(i, "bad index"))?;
                if v == 0 || v > limit {
                    return Err(err(i, "index out of range"));
                }
                Ok(v - 1)
            };
            let (r, c) = (index(nrows)?, index(ncols)?);
            let v = if pattern {
                T::one()
            } else {
                t.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(i, "bad value"))?
            };
            entries.push((r, c, v));
            if symmetric && r != c {
                entries.push((c, r, v));
            }
        }
        Ok(CooMatrix {
            nrows,
            ncols,
            entries,
        })
    }
}

impl<T: Scalar> CooMatrix<T> {
    /// Five-point Laplacian on an `nx` by `ny` grid, row-major numbering.
    pub fn laplacian_2d(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        let mut entries = Vec::new();
        let four = T::from_i64(4);
        let minus_one = T::from_i64(-1);
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                entries.push((i, i, four));
                if x > 0 {
                    entries.push((i, i - 1, minus_one));
                }
                if x + 1 < nx {
                    entries.push((i, i + 1, minus_one));
                }
                if y > 0 {
                    entries.push((i, i - nx, minus_one));
                }
                if y + 1 < ny {
                    entries.push((i, i + nx, minus_one));
                }
            }
        }
        CooMatrix {
            nrows: n,
            ncols: n,
            entries,
        }
    }

    pub fn identity(n: usize) -> Self {
        CooMatrix {
            nrows: n,
            ncols: n,
            entries: (0..n).map(|i| (i, i, T::one())).collect(),
        }
    }

    /// Random sparse matrix with about `density * nrows * ncols` distinct
    /// entries, values in `-9..=9`.
    pub fn random(seed: u64, nrows: usize, ncols: usize, density: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for r in 0..nrows {
            for c in 0..ncols {
                if rng.gen_bool(density) {
                    entries.push((r, c, T::from_i64(rng.gen_range(-9..=9))));
                }
            }
        }
        CooMatrix {
            nrows,
            ncols,
            entries,
        }
    }
}

/// One rank's rows of a distributed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMatrix<T> {
    pub rank: usize,
    pub rows: Layout,
    pub cols: Layout,
    /// Columns owned by this rank, in local numbering.
    pub a: Csr<T>,
    /// Other columns, in reduced numbering (positions in `garray`).
    pub b: Csr<T>,
    /// Global column of every reduced column of `b`, strictly increasing.
    pub garray: Vec<usize>,
}

impl<T: Scalar> SplitMatrix<T> {
    /// Builds the local part from triplets of this rank's rows (global
    /// indices). Duplicate entries are summed.
    pub fn from_triplets(
        rank: usize,
        rows: Layout,
        cols: Layout,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        let row_range = rows.range(rank);
        let col_range = cols.range(rank);
        let mut garray = BTreeSet::new();
        for &(r, c, _) in triplets {
            if !row_range.contains(&r) {
                return Err(SfError::IndexOutOfBounds {
                    index: r,
                    len: rows.global_size(),
                });
            }
            if c >= cols.global_size() {
                return Err(SfError::IndexOutOfBounds {
                    index: c,
                    len: cols.global_size(),
                });
            }
            if !col_range.contains(&c) {
                garray.insert(c);
            }
        }
        let garray: Vec<usize> = garray.into_iter().collect();
        let nlocal = row_range.len();
        let mut a_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nlocal];
        let mut b_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nlocal];
        for &(r, c, v) in triplets {
            let (row, col, target) = if col_range.contains(&c) {
                (r - row_range.start, c - col_range.start, &mut a_rows)
            } else {
                (r - row_range.start, garray.binary_search(&c).unwrap(), &mut b_rows)
            };
            match target[row].iter_mut().find(|(cc, _)| *cc == col) {
                Some((_, acc)) => *acc += v,
                None => target[row].push((col, v)),
            }
        }
        for row in a_rows.iter_mut().chain(b_rows.iter_mut()) {
            row.sort_by_key(|(c, _)| *c);
        }
        Ok(SplitMatrix {
            rank,
            rows,
            cols,
            a: Csr::from_rows(a_rows),
            b: Csr::from_rows(b_rows),
            garray,
        })
    }

    /// Collective: rank 0 holds the whole matrix and deals out contiguous row
    /// blocks; columns use the same block sizes when square.
    pub fn distribute(comm: &Communicator, global: Option<&CooMatrix<T>>) -> Result<Self> {
        let me = comm.rank();
        let dims = match global {
            Some(m) if me == 0 => [m.nrows as i64, m.ncols as i64],
            _ => [0, 0],
        };
        let dims = comm.allreduce_max(&dims)?;
        let (nrows, ncols) = (dims[0] as usize, dims[1] as usize);
        let rows = Layout::balanced(nrows, comm.size());
        let cols = if nrows == ncols {
            rows.clone()
        } else {
            Layout::balanced(ncols, comm.size())
        };
        let tag = tags::make(Phase::Collective, comm.next_collective());
        let encode = |ts: &[(usize, usize, T)]| {
            let mut out = Vec::with_capacity(ts.len() * (16 + T::SIZE));
            for (r, c, v) in ts {
                out.extend((*r as u64).to_le_bytes());
                out.extend((*c as u64).to_le_bytes());
                T::encode_slice(&[*v], &mut out);
            }
            out
        };
        let mine: Vec<(usize, usize, T)> = if me == 0 {
            let m = global.ok_or_else(|| SfError::Precondition("rank 0 must hold the matrix".into()))?;
            let mut per_rank: Vec<Vec<(usize, usize, T)>> = vec![Vec::new(); comm.size()];
            for &e in &m.entries {
                per_rank[rows.owner(e.0).unwrap().0].push(e);
            }
            for (r, ts) in per_rank.iter().enumerate().skip(1) {
                comm.send_raw(r, tag, encode(ts))?;
            }
            per_rank.swap_remove(0)
        } else {
            let bytes = comm.recv_raw(0, tag)?;
            bytes
                .chunks_exact(16 + T::SIZE)
                .map(|c| {
                    let r = u64::from_le_bytes(c[..8].try_into().unwrap()) as usize;
                    let col = u64::from_le_bytes(c[8..16].try_into().unwrap()) as usize;
                    let mut v = [T::default()];
                    T::decode_slice(&c[16..], &mut v);
                    (r, col, v[0])
                })
                .collect()
        };
        let local = Self::from_triplets(me, rows, cols, &mine);
        comm.agree(local)
    }

    pub fn local_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn local_cols(&self) -> usize {
        self.cols.local_size(self.rank)
    }
}

/// A distributed vector segment plus its ghost entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostVector<T> {
    pub owned: Vec<T>,
    /// Values of the columns in `garray`, in the same order.
    pub lvec: Vec<T>,
}

impl<T: Scalar> GhostVector<T> {
    pub fn new(owned: Vec<T>, nghost: usize) -> Self {
        GhostVector {
            owned,
            lvec: vec![T::default(); nghost],
        }
    }

    pub fn for_matrix(m: &SplitMatrix<T>, owned: Vec<T>) -> Self {
        Self::new(owned, m.garray.len())
    }
}

/// Collective: roots are this rank's vector entries, leaves are the ghost
/// slots `0..garray.len()`, each attached to the owner of its column.
pub fn build_ghost_sf<T: Scalar>(comm: &Communicator, m: &SplitMatrix<T>) -> Result<StarForest> {
    let remote: Result<Vec<RootRef>> = m
        .garray
        .iter()
        .map(|&g| {
            m.cols
                .owner(g)
                .map(|(rank, offset)| RootRef::new(rank, offset))
                .ok_or(SfError::IndexOutOfBounds {
                    index: g,
                    len: m.cols.global_size(),
                })
        })
        .collect();
    let remote = comm.agree(remote)?;
    let graph = RankGraph {
        nroots: m.local_cols(),
        leaf_local: None,
        leaf_remote: remote,
    };
    StarForest::from_graph(comm, graph, SfOptions::default())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SfError::LengthMismatch { what, expected, got });
    }
    Ok(())
}

/// `y = M x`. The ghost update runs while the diagonal block is applied.
pub fn spmv<T: Scalar>(
    sf: &StarForest,
    m: &SplitMatrix<T>,
    x: &mut GhostVector<T>,
    y: &mut [T],
) -> Result<()> {
    check_len("x", m.local_cols(), x.owned.len())?;
    check_len("ghosts", m.garray.len(), x.lvec.len())?;
    check_len("y", m.local_rows(), y.len())?;
    let unit = Unit::scalar::<T>();
    let h = sf.bcast_begin(unit, &x.owned, &mut x.lvec, ReduceOp::Replace)?;
    y.fill(T::zero());
    m.a.mul_add(&x.owned, y);
    sf.bcast_end(h, &x.owned, &mut x.lvec)?;
    m.b.mul_add(&x.lvec, y);
    Ok(())
}

/// `y = Mᵀ x`: local products, then ghost contributions summed into their
/// owners.
pub fn spmv_transpose<T: Scalar>(
    sf: &StarForest,
    m: &SplitMatrix<T>,
    x: &[T],
    y: &mut GhostVector<T>,
) -> Result<()> {
    check_len("x", m.local_rows(), x.len())?;
    check_len("y", m.local_cols(), y.owned.len())?;
    check_len("ghosts", m.garray.len(), y.lvec.len())?;
    y.owned.fill(T::zero());
    y.lvec.fill(T::zero());
    m.a.transpose_mul_add(x, &mut y.owned);
    m.b.transpose_mul_add(x, &mut y.lvec);
    sf.reduce(Unit::scalar::<T>(), &y.lvec, &mut y.owned, ReduceOp::Sum)
}
