//! Fixed-point encoding of reals into the field.
//!
//! A real x maps to round(x * 2^f) embedded two's-complement style: negatives
//! occupy the upper half of F_p. The representable range is sized so that any
//! sum of up to `headroom` encoded values stays inside (-p/2, p/2] and
//! therefore decodes exactly.

use crate::field::{Field, FieldElement};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("value {value} outside representable range +-{bound}")]
    OutOfRange { value: f64, bound: f64 },
    #[error("codec parameters leave no representable range (f={fractional_bits}, headroom={headroom})")]
    NoRange { fractional_bits: u32, headroom: u64 },
}

/// Deterministic real <-> field codec.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointCodec {
    field: Field,
    fractional_bits: u32,
    /// Largest |scaled| value accepted by encode.
    max_scaled: u64,
    /// Largest |x| accepted by encode, equal to max_scaled / 2^f.
    range_bound: f64,
}

pub const DEFAULT_FRACTIONAL_BITS: u32 = 16;
/// Default number of encoded values whose sum must stay exact.
pub const DEFAULT_HEADROOM: u64 = 1 << 20;

impl FixedPointCodec {
    /// Derive the range bound from the modulus: headroom values of magnitude
    /// up to the bound must sum without leaving (-p/2, p/2].
    pub fn new(field: Field, fractional_bits: u32, headroom: u64) -> Result<Self, CodecError> {
        let half = (field.modulus() - 1) / 2;
        let max_scaled = half / headroom.max(1);
        if fractional_bits > 52 || max_scaled < (1u64 << fractional_bits) {
            return Err(CodecError::NoRange {
                fractional_bits,
                headroom,
            });
        }
        let range_bound = max_scaled as f64 / (1u64 << fractional_bits) as f64;
        Ok(FixedPointCodec {
            field,
            fractional_bits,
            max_scaled,
            range_bound,
        })
    }

    pub fn with_defaults(field: Field) -> Self {
        Self::new(field, DEFAULT_FRACTIONAL_BITS, DEFAULT_HEADROOM)
            .expect("default parameters always leave range")
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn fractional_bits(&self) -> u32 {
        self.fractional_bits
    }

    pub fn range_bound(&self) -> f64 {
        self.range_bound
    }

    /// Largest |signed integer| the encoder emits; encodings of in-range
    /// values always satisfy |to_i128| <= max_scaled.
    pub fn max_scaled(&self) -> u64 {
        self.max_scaled
    }

    fn scale(&self) -> f64 {
        (1u64 << self.fractional_bits) as f64
    }

    /// Round to the nearest grid point, halves away from zero.
    pub fn encode(&self, x: f64) -> Result<FieldElement, CodecError> {
        if !x.is_finite() {
            return Err(CodecError::NonFinite(x));
        }
        let scaled = (x * self.scale()).round();
        if scaled.abs() > self.max_scaled as f64 {
            return Err(CodecError::OutOfRange {
                value: x,
                bound: self.range_bound,
            });
        }
        Ok(self.field.from_i128(scaled as i128))
    }

    /// Exact inverse of `encode` on its image; sums of up to `headroom`
    /// encodings decode to the exact sum of the quantized inputs.
    pub fn decode(&self, e: FieldElement) -> f64 {
        self.field.to_i128(e) as f64 / self.scale()
    }

    /// The real the encoder would store: round-trip without entering the field.
    pub fn quantize(&self, x: f64) -> Result<f64, CodecError> {
        self.encode(x).map(|e| self.decode(e))
    }
}
