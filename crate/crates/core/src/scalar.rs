//! Element types carried on star-forest vertices and the built-in reductions.
//!
//! Every value type moved by the library implements [`Element`]: it knows its
//! wire encoding and how to combine two values under a [`ReduceOp`]. Numeric
//! element types additionally implement [`Scalar`], which is what the matrix
//! demos are generic over.

use std::fmt::Debug;

use num_traits::{Float, NumAssign, PrimInt, WrappingAdd, WrappingMul};

use crate::error::{Result, SfError};

/// Base kind of an element, used to validate reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Int32,
    Int64,
    Float32,
    Float64,
    /// Raw bytes; only `Replace` is meaningful.
    Opaque,
}

impl ElementKind {
    pub fn is_integer(self) -> bool {
        matches!(self, ElementKind::Int32 | ElementKind::Int64)
    }
}

/// Built-in reductions applied when data lands on a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Replace,
    Sum,
    Prod,
    Max,
    Min,
    Land,
    Lor,
    Band,
    Bor,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 9] = [
        ReduceOp::Replace,
        ReduceOp::Sum,
        ReduceOp::Prod,
        ReduceOp::Max,
        ReduceOp::Min,
        ReduceOp::Land,
        ReduceOp::Lor,
        ReduceOp::Band,
        ReduceOp::Bor,
    ];

    /// Whether `op` can be applied to elements of `kind`.
    pub fn supports(self, kind: ElementKind) -> bool {
        match self {
            ReduceOp::Replace => true,
            ReduceOp::Sum | ReduceOp::Prod | ReduceOp::Max | ReduceOp::Min => {
                kind != ElementKind::Opaque
            }
            ReduceOp::Land | ReduceOp::Lor | ReduceOp::Band | ReduceOp::Bor => kind.is_integer(),
        }
    }

    pub fn check(self, kind: ElementKind) -> Result<()> {
        if self.supports(kind) {
            Ok(())
        } else {
            Err(SfError::IncompatibleOp { op: self, kind })
        }
    }
}

/// A value that can live on a graph vertex and travel over a transport.
pub trait Element: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const KIND: ElementKind;
    /// Encoded size in bytes.
    const SIZE: usize;

    fn write_le(self, out: &mut [u8]);
    fn read_le(bytes: &[u8]) -> Self;

    /// `acc ⊕ incoming`. Callers validate `op` with [`ReduceOp::check`] first;
    /// unsupported combinations fall back to `Replace`.
    fn combine(op: ReduceOp, acc: Self, incoming: Self) -> Self;

    /// Appends the encoding of `src` to `out`.
    fn encode_slice(src: &[Self], out: &mut Vec<u8>) {
        let start = out.len();
        out.resize(start + src.len() * Self::SIZE, 0);
        for (v, chunk) in src.iter().zip(out[start..].chunks_exact_mut(Self::SIZE)) {
            v.write_le(chunk);
        }
    }

    /// Decodes `dst.len()` elements from `bytes`.
    fn decode_slice(bytes: &[u8], dst: &mut [Self]) {
        for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(Self::SIZE)) {
            *d = Self::read_le(chunk);
        }
    }
}

/// Numeric element types usable in the sparse matrix demos.
pub trait Scalar: Element + NumAssign + PartialOrd {
    /// Relative distance used by tests and the selftest; zero for exact kinds.
    fn rel_diff(a: Self, b: Self) -> f64;
    fn from_i64(v: i64) -> Self;
}

fn combine_int<T: PrimInt + WrappingAdd + WrappingMul>(op: ReduceOp, acc: T, inc: T) -> T {
    let truth = |b: bool| if b { T::one() } else { T::zero() };
    match op {
        ReduceOp::Replace => inc,
        ReduceOp::Sum => acc.wrapping_add(&inc),
        ReduceOp::Prod => acc.wrapping_mul(&inc),
        ReduceOp::Max => acc.max(inc),
        ReduceOp::Min => acc.min(inc),
        ReduceOp::Land => truth(!acc.is_zero() && !inc.is_zero()),
        ReduceOp::Lor => truth(!acc.is_zero() || !inc.is_zero()),
        ReduceOp::Band => acc & inc,
        ReduceOp::Bor => acc | inc,
    }
}

fn combine_float<T: Float>(op: ReduceOp, acc: T, inc: T) -> T {
    match op {
        ReduceOp::Sum => acc + inc,
        ReduceOp::Prod => acc * inc,
        ReduceOp::Max => acc.max(inc),
        ReduceOp::Min => acc.min(inc),
        _ => inc,
    }
}

macro_rules! int_element {
    ($t:ty, $kind:expr) => {
        impl Element for $t {
            const KIND: ElementKind = $kind;
            const SIZE: usize = std::mem::size_of::<$t>();

            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn combine(op: ReduceOp, acc: Self, incoming: Self) -> Self {
                combine_int(op, acc, incoming)
            }
        }

        impl Scalar for $t {
            fn rel_diff(a: Self, b: Self) -> f64 {
                if a == b {
                    0.0
                } else {
                    f64::INFINITY
                }
            }

            fn from_i64(v: i64) -> Self {
                v as $t
            }
        }
    };
}

macro_rules! float_element {
    ($t:ty, $kind:expr) => {
        impl Element for $t {
            const KIND: ElementKind = $kind;
            const SIZE: usize = std::mem::size_of::<$t>();

            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn combine(op: ReduceOp, acc: Self, incoming: Self) -> Self {
                combine_float(op, acc, incoming)
            }
        }

        impl Scalar for $t {
            fn rel_diff(a: Self, b: Self) -> f64 {
                let scale = (a.abs().max(b.abs()) as f64).max(f64::MIN_POSITIVE);
                ((a - b).abs() as f64) / scale
            }

            fn from_i64(v: i64) -> Self {
                v as $t
            }
        }
    };
}

int_element!(i32, ElementKind::Int32);
int_element!(i64, ElementKind::Int64);
float_element!(f32, ElementKind::Float32);
float_element!(f64, ElementKind::Float64);

/// An uninterpreted byte, the opaque element kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Byte(pub u8);

impl Element for Byte {
    const KIND: ElementKind = ElementKind::Opaque;
    const SIZE: usize = 1;

    fn write_le(self, out: &mut [u8]) {
        out[0] = self.0;
    }

    fn read_le(bytes: &[u8]) -> Self {
        Byte(bytes[0])
    }

    fn combine(_op: ReduceOp, _acc: Self, incoming: Self) -> Self {
        incoming
    }

    fn encode_slice(src: &[Self], out: &mut Vec<u8>) {
        out.extend(src.iter().map(|b| b.0));
    }

    fn decode_slice(bytes: &[u8], dst: &mut [Self]) {
        for (d, b) in dst.iter_mut().zip(bytes) {
            *d = Byte(*b);
        }
    }
}

/// The datatype of one graph vertex: `blocklen` consecutive elements of `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub kind: ElementKind,
    pub blocklen: usize,
}

impl Unit {
    pub fn of<T: Element>(blocklen: usize) -> Self {
        Unit {
            kind: T::KIND,
            blocklen,
        }
    }

    pub fn scalar<T: Element>() -> Self {
        Self::of::<T>(1)
    }

    /// Checks that the unit matches the data type `T` and supports `op`.
    pub fn validate<T: Element>(&self, op: ReduceOp) -> Result<()> {
        if self.blocklen == 0 {
            return Err(SfError::ZeroBlocklen);
        }
        if self.kind != T::KIND {
            return Err(SfError::UnitKindMismatch {
                declared: self.kind,
                actual: T::KIND,
            });
        }
        op.check(self.kind)
    }

    pub fn bytes<T: Element>(&self) -> usize {
        self.blocklen * T::SIZE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitwise_ops_rejected_for_floats() {
        assert!(ReduceOp::Band.check(ElementKind::Float64).is_err());
        assert!(ReduceOp::Land.check(ElementKind::Float32).is_err());
        assert!(ReduceOp::Sum.check(ElementKind::Float64).is_ok());
        assert!(ReduceOp::Sum.check(ElementKind::Opaque).is_err());
        assert!(ReduceOp::Replace.check(ElementKind::Opaque).is_ok());
    }

    #[test]
    fn integer_reductions() {
        assert_eq!(i64::combine(ReduceOp::Sum, 3, 4), 7);
        assert_eq!(i64::combine(ReduceOp::Max, 9, 4), 9);
        assert_eq!(i32::combine(ReduceOp::Land, 2, 0), 0);
        assert_eq!(i32::combine(ReduceOp::Lor, 2, 0), 1);
        assert_eq!(i64::combine(ReduceOp::Band, 0b110, 0b011), 0b010);
        assert_eq!(i64::combine(ReduceOp::Sum, i64::MAX, 1), i64::MIN);
    }

    #[test]
    fn encoding_round_trips() {
        let src = [1.5f64, -2.25, 1e300];
        let mut bytes = Vec::new();
        f64::encode_slice(&src, &mut bytes);
        assert_eq!(bytes.len(), 24);
        let mut back = [0.0; 3];
        f64::decode_slice(&bytes, &mut back);
        assert_eq!(src, back);
    }

    #[test]
    fn unit_validation() {
        assert!(Unit::of::<i64>(2).validate::<i64>(ReduceOp::Bor).is_ok());
        assert!(matches!(
            Unit::of::<i64>(1).validate::<f64>(ReduceOp::Sum),
            Err(SfError::UnitKindMismatch { .. })
        ));
        assert!(matches!(
            Unit::of::<i64>(0).validate::<i64>(ReduceOp::Sum),
            Err(SfError::ZeroBlocklen)
        ));
    }
}
