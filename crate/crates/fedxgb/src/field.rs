//! Prime-field arithmetic for secret sharing and masking.
//!
//! All protocol values live in F_p for a configurable odd prime p < 2^62.
//! The default modulus is the Mersenne prime 2^61 - 1, large enough that
//! sums of bounded fixed-point encodings never wrap (see `codec`).

use rand::Rng;
use thiserror::Error;

/// Default modulus: the Mersenne prime 2^61 - 1.
pub const DEFAULT_PRIME: u64 = 2_305_843_009_213_693_951;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not an odd prime greater than 2")]
    BadModulus(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// An element of F_p, stored reduced. Elements carry no modulus; all
/// arithmetic goes through the owning [`Field`]. Deserialized values are
/// raw and must be range-checked against the field before use.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    /// Raw reduced representative in [0, p).
    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }
}

/// Arithmetic context for F_p. Cheap to copy; every operation reduces mod p.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    p: u64,
}

impl Default for Field {
    fn default() -> Self {
        Field { p: DEFAULT_PRIME }
    }
}

impl Field {
    /// A field with the given prime modulus. The primality precondition is
    /// spot-checked with trial division up to 2^10; callers supplying a large
    /// composite get arithmetic that silently fails to invert, so the
    /// constructor rejects obvious non-primes early.
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if p < 3 || p % 2 == 0 || p >= (1 << 62) {
            return Err(FieldError::BadModulus(p));
        }
        let mut d = 3u64;
        while d < 1024 && d * d <= p {
            if p % d == 0 {
                return Err(FieldError::BadModulus(p));
            }
            d += 2;
        }
        Ok(Field { p })
    }

    /// Whether a (possibly deserialized) element is reduced mod p.
    pub fn contains(&self, e: FieldElement) -> bool {
        e.0 < self.p
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    /// Reduce an arbitrary integer into the field.
    pub fn elem(&self, v: u64) -> FieldElement {
        FieldElement(v % self.p)
    }

    /// Embed a signed integer: negatives map to the upper half of the field.
    pub fn from_i128(&self, v: i128) -> FieldElement {
        let p = self.p as i128;
        FieldElement(v.rem_euclid(p) as u64)
    }

    /// Signed representative in (-p/2, p/2]: values above (p-1)/2 read as negative.
    pub fn to_i128(&self, e: FieldElement) -> i128 {
        if e.0 > (self.p - 1) / 2 {
            e.0 as i128 - self.p as i128
        } else {
            e.0 as i128
        }
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 as u128 + b.0 as u128;
        FieldElement((s % self.p as u128) as u64)
    }

    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(a.0 + (self.p - b.0))
        }
    }

    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.p - a.0)
        }
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(((a.0 as u128 * b.0 as u128) % self.p as u128) as u64)
    }

    /// Scale by a plain integer.
    pub fn mul_u64(&self, a: FieldElement, k: u64) -> FieldElement {
        self.mul(a, self.elem(k))
    }

    pub fn pow(&self, mut base: FieldElement, mut exp: u64) -> FieldElement {
        let mut acc = FieldElement::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.p - 2))
    }

    /// Uniform element from the given generator via rejection sampling.
    pub fn rand_elem<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        // Rejection bound: largest multiple of p below 2^64.
        let zone = u64::MAX - u64::MAX % self.p;
        loop {
            let v = rng.gen::<u64>();
            if v < zone {
                return FieldElement(v % self.p);
            }
        }
    }

    /// Sum an iterator of elements.
    pub fn sum<I: IntoIterator<Item = FieldElement>>(&self, iter: I) -> FieldElement {
        iter.into_iter()
            .fold(FieldElement::ZERO, |acc, e| self.add(acc, e))
    }
}
