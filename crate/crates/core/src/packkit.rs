//! Index-pattern analysis and the pack / unpack / scatter primitives.
//!
//! A vertex-index list is classified once into an [`IndexPattern`]. Contiguous
//! patterns let the caller use its own data as the wire buffer; strided 3-D
//! patterns are enumerated arithmetically; everything else is stored as an
//! explicit list together with a duplicate flag, which decides whether
//! contributions to one destination must be serialized.

use std::borrow::Cow;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SfError};
use crate::scalar::{Element, ReduceOp};

/// Classification of a vertex-index list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexPattern {
    /// `start, start+1, ..., start+count-1`
    Contiguous { start: usize, count: usize },
    /// `start + xy*k + x*j + i` for `i < dx`, `j < dy`, `k < dz`, in that
    /// order (i fastest).
    Strided3D {
        start: usize,
        dx: usize,
        dy: usize,
        dz: usize,
        x: usize,
        xy: usize,
    },
    Indexed {
        indices: Vec<usize>,
        has_duplicates: bool,
    },
}

/// Domain extents of a regular grid numbered in x, y, z order: the row
/// length `x` and the plane size `xy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extents {
    pub x: usize,
    pub xy: usize,
}

impl IndexPattern {
    pub fn len(&self) -> usize {
        match self {
            IndexPattern::Contiguous { count, .. } => *count,
            IndexPattern::Strided3D { dx, dy, dz, .. } => dx * dy * dz,
            IndexPattern::Indexed { indices, .. } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_contiguous(&self) -> bool {
        matches!(self, IndexPattern::Contiguous { .. })
    }

    pub fn has_duplicates(&self) -> bool {
        match self {
            IndexPattern::Indexed { has_duplicates, .. } => *has_duplicates,
            _ => false,
        }
    }

    /// The `i`-th index of the enumeration.
    pub fn index(&self, i: usize) -> usize {
        match self {
            IndexPattern::Contiguous { start, .. } => start + i,
            IndexPattern::Strided3D {
                start,
                dx,
                dy,
                x,
                xy,
                ..
            } => {
                let ii = i % dx;
                let jj = (i / dx) % dy;
                let kk = i / (dx * dy);
                start + xy * kk + x * jj + ii
            }
            IndexPattern::Indexed { indices, .. } => indices[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(move |i| self.index(i))
    }

    /// Largest index, `None` for an empty pattern.
    pub fn max_index(&self) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        match self {
            IndexPattern::Contiguous { start, count } => Some(start + count - 1),
            IndexPattern::Strided3D {
                start,
                dx,
                dy,
                dz,
                x,
                xy,
            } => Some(start + xy * (dz - 1) + x * (dy - 1) + dx - 1),
            IndexPattern::Indexed { indices, .. } => indices.iter().copied().max(),
        }
    }

    /// Number of contributions that land on an already-targeted index.
    pub fn duplicate_count(&self) -> usize {
        if !self.has_duplicates() {
            return 0;
        }
        let distinct: HashSet<usize> = self.iter().collect();
        self.len() - distinct.len()
    }

    fn check_bounds(&self, blocklen: usize, len: usize) -> Result<()> {
        match self.max_index() {
            Some(m) if (m + 1) * blocklen > len => Err(SfError::IndexOutOfBounds {
                index: m,
                len: len / blocklen.max(1),
            }),
            _ => Ok(()),
        }
    }
}

/// Classifies an index list. `None` stands for the contiguous range `0..n`.
///
/// Detection order is contiguous, then strided 3-D (only when the caller
/// supplies grid extents), then an explicit list.
pub fn analyze(indices: Option<&[usize]>, n: usize, extents: Option<Extents>) -> IndexPattern {
    let Some(list) = indices else {
        return IndexPattern::Contiguous { start: 0, count: n };
    };
    if list.is_empty() {
        return IndexPattern::Contiguous { start: 0, count: 0 };
    }
    let start = list[0];
    if list.iter().enumerate().all(|(i, &v)| v == start + i) {
        return IndexPattern::Contiguous {
            start,
            count: list.len(),
        };
    }
    if let Some(ext) = extents {
        if let Some(p) = detect_strided(list, ext) {
            return p;
        }
    }
    let mut seen = HashSet::with_capacity(list.len());
    let has_duplicates = !list.iter().all(|v| seen.insert(*v));
    IndexPattern::Indexed {
        indices: list.to_vec(),
        has_duplicates,
    }
}

fn detect_strided(list: &[usize], ext: Extents) -> Option<IndexPattern> {
    let n = list.len();
    let start = list[0];
    let mut dx = 1;
    while dx < n && list[dx] == start + dx {
        dx += 1;
    }
    if dx > ext.x || ext.x == 0 {
        return None;
    }
    let mut dy = 1;
    while dy * dx < n && list[dy * dx] == start + ext.x * dy {
        dy += 1;
    }
    if n % (dx * dy) != 0 {
        return None;
    }
    let dz = n / (dx * dy);
    if dz > 1 && ext.xy < ext.x * dy {
        return None;
    }
    let pat = IndexPattern::Strided3D {
        start,
        dx,
        dy,
        dz,
        x: ext.x,
        xy: ext.xy,
    };
    let ok = pat.iter().zip(list).all(|(a, &b)| a == b);
    ok.then_some(pat)
}

/// Order in which contributions are applied by [`unpack`] and [`scatter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApplyOrder {
    /// Ascending contribution index; reproducible.
    #[default]
    Sequential,
    /// A seeded random permutation, standing in for the arrival order of
    /// concurrent atomic updates.
    Shuffled(u64),
}

impl ApplyOrder {
    fn permutation(self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if let ApplyOrder::Shuffled(seed) = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

/// Side information reported by the unpacking primitives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnpackStats {
    /// Contributions with `Replace` that landed on an index already written
    /// in the same call; the surviving value is one of them.
    pub replace_conflicts: usize,
}

/// Gathers `src[idx(i)]` blocks into a buffer. Contiguous patterns borrow the
/// source region instead of copying it.
pub fn pack<'a, T: Element>(
    src: &'a [T],
    pat: &IndexPattern,
    blocklen: usize,
) -> Result<Cow<'a, [T]>> {
    pat.check_bounds(blocklen, src.len())?;
    if let IndexPattern::Contiguous { start, count } = *pat {
        return Ok(Cow::Borrowed(&src[start * blocklen..(start + count) * blocklen]));
    }
    let mut buf = Vec::with_capacity(pat.len() * blocklen);
    for idx in pat.iter() {
        buf.extend_from_slice(&src[idx * blocklen..(idx + 1) * blocklen]);
    }
    Ok(Cow::Owned(buf))
}

/// `dst[idx(i)] ⊕= buf[i]` for every block of `buf`.
///
/// Contributions are applied one at a time in `order`, so duplicate
/// destination indices fold every contribution.
pub fn unpack<T: Element>(
    dst: &mut [T],
    pat: &IndexPattern,
    blocklen: usize,
    op: ReduceOp,
    buf: &[T],
    order: ApplyOrder,
) -> Result<UnpackStats> {
    op.check(T::KIND)?;
    if buf.len() != pat.len() * blocklen {
        return Err(SfError::LengthMismatch {
            what: "unpack buffer",
            expected: pat.len() * blocklen,
            got: buf.len(),
        });
    }
    pat.check_bounds(blocklen, dst.len())?;
    if let (IndexPattern::Contiguous { start, count }, ReduceOp::Replace) = (pat, op) {
        dst[start * blocklen..(start + count) * blocklen].copy_from_slice(buf);
        return Ok(UnpackStats::default());
    }
    for i in order.permutation(pat.len()) {
        let d = pat.index(i) * blocklen;
        let s = i * blocklen;
        for k in 0..blocklen {
            dst[d + k] = T::combine(op, dst[d + k], buf[s + k]);
        }
    }
    Ok(UnpackStats {
        replace_conflicts: conflicts(pat, op),
    })
}

/// Unpacks straight from wire bytes. Returns whether a staging receive buffer
/// had to be materialized; only contiguous `Replace` lands in place.
pub fn unpack_wire<T: Element>(
    dst: &mut [T],
    pat: &IndexPattern,
    blocklen: usize,
    op: ReduceOp,
    bytes: &[u8],
    order: ApplyOrder,
) -> Result<(UnpackStats, bool)> {
    let n = pat.len() * blocklen;
    if bytes.len() != n * T::SIZE {
        return Err(SfError::LengthMismatch {
            what: "received bytes",
            expected: n * T::SIZE,
            got: bytes.len(),
        });
    }
    op.check(T::KIND)?;
    pat.check_bounds(blocklen, dst.len())?;
    if let (IndexPattern::Contiguous { start, count }, ReduceOp::Replace) = (pat, op) {
        T::decode_slice(bytes, &mut dst[start * blocklen..(start + count) * blocklen]);
        return Ok((UnpackStats::default(), false));
    }
    let mut staged = vec![T::default(); n];
    T::decode_slice(bytes, &mut staged);
    let stats = unpack(dst, pat, blocklen, op, &staged, order)?;
    Ok((stats, true))
}

/// `dst[dst_idx(i)] ⊕= src[src_idx(i)]` without an intermediate buffer.
pub fn scatter<T: Element>(
    src: &[T],
    src_pat: &IndexPattern,
    dst: &mut [T],
    dst_pat: &IndexPattern,
    blocklen: usize,
    op: ReduceOp,
    order: ApplyOrder,
) -> Result<UnpackStats> {
    op.check(T::KIND)?;
    if src_pat.len() != dst_pat.len() {
        return Err(SfError::LengthMismatch {
            what: "scatter patterns",
            expected: src_pat.len(),
            got: dst_pat.len(),
        });
    }
    src_pat.check_bounds(blocklen, src.len())?;
    dst_pat.check_bounds(blocklen, dst.len())?;
    if let (
        IndexPattern::Contiguous { start: s0, count },
        IndexPattern::Contiguous { start: d0, .. },
        ReduceOp::Replace,
    ) = (src_pat, dst_pat, op)
    {
        dst[d0 * blocklen..(d0 + count) * blocklen]
            .copy_from_slice(&src[s0 * blocklen..(s0 + count) * blocklen]);
        return Ok(UnpackStats::default());
    }
    for i in order.permutation(src_pat.len()) {
        let s = src_pat.index(i) * blocklen;
        let d = dst_pat.index(i) * blocklen;
        for k in 0..blocklen {
            dst[d + k] = T::combine(op, dst[d + k], src[s + k]);
        }
    }
    Ok(UnpackStats {
        replace_conflicts: conflicts(dst_pat, op),
    })
}

fn conflicts(pat: &IndexPattern, op: ReduceOp) -> usize {
    if op == ReduceOp::Replace {
        pat.duplicate_count()
    } else {
        0
    }
}
