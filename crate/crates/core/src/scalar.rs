//! Floating-point abstraction shared by the model, losses and optimizers.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the engine can train with.
///
/// Implemented for `f32` and `f64`. Besides the arithmetic bounds it carries
/// a stable little-endian byte encoding, which checkpoints rely on for
/// bit-exact round trips.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Name written into checkpoints (`"f32"` / `"f64"`).
    const NAME: &'static str;
    /// Width of the byte encoding.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` literal. Never fails for finite input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");

/// Encodes a slice as concatenated little-endian values.
pub fn encode_le<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Inverse of [`encode_le`]. Returns `None` when the byte count is not a
/// multiple of the scalar width.
pub fn decode_le<T: Scalar>(bytes: &[u8]) -> Option<Vec<T>> {
    if !bytes.len().is_multiple_of(T::BYTES) {
        return None;
    }
    Some(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_roundtrip_preserves_bits() {
        let xs = [0.1f64, -0.0, f64::MIN_POSITIVE, 1e300, -3.25];
        let back: Vec<f64> = decode_le(&encode_le(&xs)).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let ys = [0.1f32, 7.5, -1e-30];
        let back: Vec<f32> = decode_le(&encode_le(&ys)).unwrap();
        assert_eq!(ys.to_vec(), back);
    }

    #[test]
    fn decode_rejects_ragged_input() {
        assert!(decode_le::<f64>(&[0u8; 7]).is_none());
        assert!(decode_le::<f32>(&[0u8; 6]).is_none());
    }
}
