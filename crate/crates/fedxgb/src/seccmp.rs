//! Secure comparison of two secret-shared encoded values.
//!
//! Edge servers hold aligned threshold sharings of s1 and s2. Each computes
//! its share of d = s1 - s2 and multiplies it by a positive blinding factor
//! known to every edge except a designated combiner. The combiner rebuilds
//! only beta * d from the other edges' blinded shares, reads its sign, and
//! shares the indicator bit back: 0 when s1 > s2, 1 otherwise (ties give 1).
//! No edge sees either operand; the combiner sees a sign-preserving multiple
//! of the difference whose magnitude is hidden by beta.
//!
//! The blinding bound keeps |beta * d| inside (-p/2, p/2), so the signed
//! reading of the product is exact for operands within the codec range.

use crate::codec::FixedPointCodec;
use crate::field::{Field, FieldElement};
use crate::shamir::{self, ShamirError, VectorShare};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CmpError {
    #[error("operand {value} outside comparable range +-{bound}")]
    Range { value: f64, bound: f64 },
    #[error(transparent)]
    Shares(#[from] ShamirError),
    #[error("result share reconstructed to a non-bit value")]
    NotABit,
    #[error("comparison domain needs at least one edge server")]
    EmptyDomain,
}

/// The edge-server roster a comparison runs over.
///
/// The combiner is the highest index and reconstructs from the other edges'
/// blinded shares only, so for theta >= 2 the sharing threshold is capped at
/// theta - 1 (and at the honest-majority default below that). theta = 1
/// degenerates to a local comparison by the single edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CmpDomain {
    theta: usize,
    threshold: usize,
}

impl CmpDomain {
    pub fn new(theta: usize) -> Result<Self, CmpError> {
        if theta == 0 {
            return Err(CmpError::EmptyDomain);
        }
        let majority = theta / 2 + 1;
        let threshold = if theta == 1 {
            1
        } else {
            majority.min(theta - 1)
        };
        Ok(CmpDomain { theta, threshold })
    }

    pub fn theta(&self) -> usize {
        self.theta
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn roster(&self) -> Vec<u32> {
        (1..=self.theta as u32).collect()
    }

    pub fn combiner(&self) -> u32 {
        self.theta as u32
    }

    pub fn is_combiner(&self, index: u32) -> bool {
        index == self.combiner()
    }
}

/// Largest blinding factor that cannot push |beta * d| past p/2 for
/// operands within the codec range.
pub fn blind_bound(codec: &FixedPointCodec) -> u64 {
    let half = (codec.field().modulus() - 1) / 2;
    (half / (2 * codec.max_scaled())).max(1)
}

/// Positive blinding factor in [1, blind_bound], derived from the seed the
/// non-combiner edges share and a per-comparison tag. Fresh tags keep
/// ratios of blinded differences uninformative across comparisons.
pub fn blind_factor(codec: &FixedPointCodec, seed: &[u8; 32], tag: &[u8]) -> FieldElement {
    let mut h = Sha256::new();
    h.update(b"fedxgb/cmp-blind/v1");
    h.update(seed);
    h.update((tag.len() as u32).to_le_bytes());
    h.update(tag);
    let digest = h.finalize();
    let wide = u128::from_le_bytes(digest[..16].try_into().unwrap());
    let beta = 1 + (wide % blind_bound(codec) as u128) as u64;
    codec.field().elem(beta)
}

/// A non-combiner edge's step: blind its share of d = s1 - s2.
pub fn blinded_difference_share(
    field: &Field,
    beta: FieldElement,
    s1_share: FieldElement,
    s2_share: FieldElement,
) -> FieldElement {
    field.mul(beta, field.sub(s1_share, s2_share))
}

/// Vector form for batched comparisons against one threshold share.
pub fn blinded_difference_vector(
    field: &Field,
    beta: FieldElement,
    s1_shares: &[FieldElement],
    s2_shares: &[FieldElement],
) -> Vec<FieldElement> {
    s1_shares
        .iter()
        .zip(s2_shares)
        .map(|(&a, &b)| blinded_difference_share(field, beta, a, b))
        .collect()
}

/// Combiner step: rebuild the blinded differences and read their signs.
/// Returns one indicator per element: false when s1 > s2, true otherwise.
pub fn combine(
    field: &Field,
    blinded_shares: &[VectorShare],
    threshold: usize,
) -> Result<Vec<bool>, CmpError> {
    let w = shamir::reconstruct_vector(field, blinded_shares, threshold)?;
    Ok(w.iter().map(|&e| field.to_i128(e) <= 0).collect())
}

/// Combiner step: share the indicator bits back to the edge roster.
pub fn share_bits<R: rand::Rng + ?Sized>(
    field: &Field,
    bits: &[bool],
    domain: &CmpDomain,
    rng: &mut R,
) -> Result<Vec<VectorShare>, CmpError> {
    let elems: Vec<FieldElement> = bits
        .iter()
        .map(|&b| if b { FieldElement::ONE } else { FieldElement::ZERO })
        .collect();
    Ok(shamir::share_vector(
        field,
        &elems,
        domain.threshold,
        &domain.roster(),
        rng,
    )?)
}

/// Reconstruct indicator bits from result shares. Anything other than an
/// exact 0 or 1 is a protocol violation.
pub fn reconstruct_bits(
    field: &Field,
    shares: &[VectorShare],
    threshold: usize,
) -> Result<Vec<bool>, CmpError> {
    let values = shamir::reconstruct_vector(field, shares, threshold)?;
    values
        .iter()
        .map(|&v| match v.raw() {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CmpError::NotABit),
        })
        .collect()
}

/// A comparison request over already-encoded operands.
#[derive(Debug, Clone, Copy)]
pub struct CmpRequest {
    pub s1: FieldElement,
    pub s2: FieldElement,
}

impl CmpRequest {
    /// Encode two reals, rejecting operands outside the comparable range.
    pub fn from_values(codec: &FixedPointCodec, s1: f64, s2: f64) -> Result<Self, CmpError> {
        let enc = |v: f64| {
            codec.encode(v).map_err(|_| CmpError::Range {
                value: v,
                bound: codec.range_bound(),
            })
        };
        Ok(CmpRequest {
            s1: enc(s1)?,
            s2: enc(s2)?,
        })
    }
}

/// Drive the whole exchange in-process: share both operands to the edge
/// roster, blind, combine, share bits back, reconstruct. The federated
/// state machine performs these same steps across bus messages.
pub fn run_local<R: rand::Rng + ?Sized>(
    codec: &FixedPointCodec,
    domain: &CmpDomain,
    req: CmpRequest,
    rng: &mut R,
) -> Result<bool, CmpError> {
    let field = codec.field();
    let roster = domain.roster();
    let t = domain.threshold;
    let s1 = shamir::share(&field, req.s1, t, &roster, rng)?;
    let s2 = shamir::share(&field, req.s2, t, &roster, rng)?;

    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    let beta = blind_factor(codec, &seed, b"local");

    let blinded: Vec<VectorShare> = if domain.theta == 1 {
        // Single edge: it is both blinder and combiner and sees d directly.
        vec![VectorShare {
            index: 1,
            values: vec![blinded_difference_share(&field, beta, s1[0].value, s2[0].value)],
        }]
    } else {
        roster
            .iter()
            .filter(|&&i| !domain.is_combiner(i))
            .map(|&i| VectorShare {
                index: i,
                values: vec![blinded_difference_share(
                    &field,
                    beta,
                    s1[i as usize - 1].value,
                    s2[i as usize - 1].value,
                )],
            })
            .collect()
    };
    let bits = combine(&field, &blinded, t)?;
    let result_shares = share_bits(&field, &bits, domain, rng)?;
    Ok(reconstruct_bits(&field, &result_shares[..t], t)?[0])
}
