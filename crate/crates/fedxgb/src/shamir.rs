//! Threshold secret sharing over the prime field.
//!
//! A secret s becomes evaluations of a random degree t-1 polynomial with
//! constant term s at the nonzero roster indices; any t shares reconstruct by
//! Lagrange interpolation at zero, fewer reveal nothing. Sharing is linear:
//! adding shares index-wise yields shares of the sum.
//!
//! t = 1 is supported as the degenerate constant polynomial (every share is
//! the secret itself); it arises for single-member rosters.

use crate::field::{Field, FieldElement};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShamirError {
    #[error("threshold {t} not in 1..={n}")]
    Threshold { t: usize, n: usize },
    #[error("roster contains a zero or duplicate index")]
    Roster,
    #[error("need at least {need} shares, got {got}")]
    TooFewShares { need: usize, got: usize },
    #[error("byte chunk does not fit below the modulus")]
    ChunkTooLarge,
}

/// One holder's share: the polynomial evaluated at `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Share {
    pub index: u32,
    pub value: FieldElement,
}

/// Shares of a vector of secrets, one independent polynomial per element,
/// all evaluated at the same holder index.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VectorShare {
    pub index: u32,
    pub values: Vec<FieldElement>,
}

fn check_roster(t: usize, roster: &[u32]) -> Result<(), ShamirError> {
    if t == 0 || t > roster.len() {
        return Err(ShamirError::Threshold {
            t,
            n: roster.len(),
        });
    }
    let mut seen = roster.to_vec();
    seen.sort_unstable();
    if seen[0] == 0 || seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(ShamirError::Roster);
    }
    Ok(())
}

fn eval_poly(field: &Field, coeffs: &[FieldElement], x: u64) -> FieldElement {
    let x = field.elem(x);
    let mut acc = FieldElement::ZERO;
    for &c in coeffs.iter().rev() {
        acc = field.add(field.mul(acc, x), c);
    }
    acc
}

/// Split `secret` into one share per roster index, threshold `t`.
pub fn share<R: Rng + ?Sized>(
    field: &Field,
    secret: FieldElement,
    t: usize,
    roster: &[u32],
    rng: &mut R,
) -> Result<Vec<Share>, ShamirError> {
    check_roster(t, roster)?;
    let mut coeffs = Vec::with_capacity(t);
    coeffs.push(secret);
    for _ in 1..t {
        coeffs.push(field.rand_elem(rng));
    }
    Ok(roster
        .iter()
        .map(|&idx| Share {
            index: idx,
            value: eval_poly(field, &coeffs, idx as u64),
        })
        .collect())
}

fn lagrange_at_zero(field: &Field, shares: &[Share]) -> Result<FieldElement, ShamirError> {
    let mut acc = FieldElement::ZERO;
    for (j, sj) in shares.iter().enumerate() {
        let xj = field.elem(sj.index as u64);
        let mut num = FieldElement::ONE;
        let mut den = FieldElement::ONE;
        for (m, sm) in shares.iter().enumerate() {
            if m == j {
                continue;
            }
            let xm = field.elem(sm.index as u64);
            num = field.mul(num, xm);
            den = field.mul(den, field.sub(xm, xj));
        }
        let weight = field.mul(num, field.inv(den).map_err(|_| ShamirError::Roster)?);
        acc = field.add(acc, field.mul(sj.value, weight));
    }
    Ok(acc)
}

/// Reconstruct from at least `t` shares with distinct nonzero indices.
/// All provided shares participate in the interpolation.
pub fn reconstruct(
    field: &Field,
    shares: &[Share],
    t: usize,
) -> Result<FieldElement, ShamirError> {
    if shares.len() < t || t == 0 {
        return Err(ShamirError::TooFewShares {
            need: t.max(1),
            got: shares.len(),
        });
    }
    let indices: Vec<u32> = shares.iter().map(|s| s.index).collect();
    check_roster(1, &indices)?;
    lagrange_at_zero(field, shares)
}

/// Share each element of `values` independently to the same roster.
pub fn share_vector<R: Rng + ?Sized>(
    field: &Field,
    values: &[FieldElement],
    t: usize,
    roster: &[u32],
    rng: &mut R,
) -> Result<Vec<VectorShare>, ShamirError> {
    check_roster(t, roster)?;
    let mut out: Vec<VectorShare> = roster
        .iter()
        .map(|&idx| VectorShare {
            index: idx,
            values: Vec::with_capacity(values.len()),
        })
        .collect();
    for &v in values {
        let shares = share(field, v, t, roster, rng)?;
        for (slot, s) in out.iter_mut().zip(shares) {
            slot.values.push(s.value);
        }
    }
    Ok(out)
}

/// Element-wise reconstruction of a shared vector.
pub fn reconstruct_vector(
    field: &Field,
    shares: &[VectorShare],
    t: usize,
) -> Result<Vec<FieldElement>, ShamirError> {
    if shares.len() < t || t == 0 {
        return Err(ShamirError::TooFewShares {
            need: t.max(1),
            got: shares.len(),
        });
    }
    let len = shares[0].values.len();
    if shares.iter().any(|s| s.values.len() != len) {
        return Err(ShamirError::Roster);
    }
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let column: Vec<Share> = shares
            .iter()
            .map(|s| Share {
                index: s.index,
                value: s.values[k],
            })
            .collect();
        out.push(reconstruct(field, &column, t)?);
    }
    Ok(out)
}

const CHUNK_BYTES: usize = 7;

/// Share an opaque byte string by splitting it into 56-bit chunks, one
/// sharing per chunk. Used for key material that is not a field element.
pub fn share_bytes<R: Rng + ?Sized>(
    field: &Field,
    bytes: &[u8],
    t: usize,
    roster: &[u32],
    rng: &mut R,
) -> Result<Vec<VectorShare>, ShamirError> {
    if field.modulus() <= 1 << (CHUNK_BYTES * 8) {
        return Err(ShamirError::ChunkTooLarge);
    }
    let chunks: Vec<FieldElement> = bytes
        .chunks(CHUNK_BYTES)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..c.len()].copy_from_slice(c);
            field.elem(u64::from_le_bytes(buf))
        })
        .collect();
    share_vector(field, &chunks, t, roster, rng)
}

/// Inverse of [`share_bytes`]; `byte_len` restores the original length.
pub fn reconstruct_bytes(
    field: &Field,
    shares: &[VectorShare],
    t: usize,
    byte_len: usize,
) -> Result<Vec<u8>, ShamirError> {
    let chunks = reconstruct_vector(field, shares, t)?;
    if chunks.len() != byte_len.div_ceil(CHUNK_BYTES) {
        return Err(ShamirError::Roster);
    }
    let mut out = Vec::with_capacity(byte_len);
    for chunk in &chunks {
        out.extend_from_slice(&chunk.raw().to_le_bytes()[..CHUNK_BYTES]);
    }
    out.truncate(byte_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(0xfeed)
    }

    /// Every one of the C(5,3) = 10 subsets of a (3,5) sharing of 42 agrees.
    #[test]
    fn all_three_subsets_of_five_reconstruct_forty_two() {
        let f = Field::default();
        let secret = f.elem(42);
        let shares = share(&f, secret, 3, &[1, 2, 3, 4, 5], &mut rng()).unwrap();
        let mut subsets = 0;
        for a in 0..5 {
            for b in a + 1..5 {
                for c in b + 1..5 {
                    let picked = [shares[a], shares[b], shares[c]];
                    assert_eq!(reconstruct(&f, &picked, 3).unwrap(), secret);
                    subsets += 1;
                }
            }
        }
        assert_eq!(subsets, 10);
    }

    #[test]
    fn share_order_does_not_matter() {
        let f = Field::default();
        let secret = f.elem(9_999_991);
        let mut shares = share(&f, secret, 4, &[3, 9, 14, 27, 31], &mut rng()).unwrap();
        shares.reverse();
        assert_eq!(reconstruct(&f, &shares, 4).unwrap(), secret);
    }

    #[test]
    fn below_threshold_is_refused() {
        let f = Field::default();
        let shares = share(&f, f.elem(5), 3, &[1, 2, 3, 4], &mut rng()).unwrap();
        let err = reconstruct(&f, &shares[..2], 3).unwrap_err();
        assert_eq!(err, ShamirError::TooFewShares { need: 3, got: 2 });
    }

    #[test]
    fn rejects_bad_rosters() {
        let f = Field::default();
        let mut r = rng();
        assert_eq!(
            share(&f, f.elem(1), 3, &[1, 2], &mut r).unwrap_err(),
            ShamirError::Threshold { t: 3, n: 2 }
        );
        assert_eq!(
            share(&f, f.elem(1), 2, &[0, 1], &mut r).unwrap_err(),
            ShamirError::Roster
        );
        assert_eq!(
            share(&f, f.elem(1), 2, &[4, 4, 5], &mut r).unwrap_err(),
            ShamirError::Roster
        );
    }

    #[test]
    fn degenerate_single_member_roster() {
        let f = Field::default();
        let secret = f.elem(77);
        let shares = share(&f, secret, 1, &[1], &mut rng()).unwrap();
        assert_eq!(shares[0].value, secret);
        assert_eq!(reconstruct(&f, &shares, 1).unwrap(), secret);
    }

    #[test]
    fn large_roster_smoke() {
        let f = Field::default();
        let roster: Vec<u32> = (1..=300).collect();
        let secret = f.elem(123_456_789);
        let shares = share(&f, secret, 151, &roster, &mut rng()).unwrap();
        assert_eq!(reconstruct(&f, &shares[..151], 151).unwrap(), secret);
        assert_eq!(reconstruct(&f, &shares[149..], 151).unwrap(), secret);
    }

    #[test]
    fn sharing_is_additively_homomorphic() {
        let f = Field::default();
        let mut r = rng();
        let roster = [1, 2, 3, 4, 5, 6, 7];
        let (a, b) = (f.elem(1_000_003), f.from_i128(-77));
        let sa = share(&f, a, 4, &roster, &mut r).unwrap();
        let sb = share(&f, b, 4, &roster, &mut r).unwrap();
        let sum: Vec<Share> = sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| Share {
                index: x.index,
                value: f.add(x.value, y.value),
            })
            .collect();
        assert_eq!(reconstruct(&f, &sum[1..5], 4).unwrap(), f.add(a, b));
    }

    /// With p = 101, individual share values over many fresh sharings of the
    /// same secret are uniform: a chi-squared statistic over all 101 cells
    /// stays under the 0.001 tail cutoff for 100 degrees of freedom (~149).
    #[test]
    fn share_values_look_uniform_in_small_field() {
        let f = Field::new(101).unwrap();
        let mut r = rng();
        let secret = f.elem(42);
        let per_cell = 400u64;
        let draws = 101 * per_cell;
        let mut counts = [0u64; 101];
        for _ in 0..draws {
            let s = share(&f, secret, 2, &[1, 2, 3], &mut r).unwrap();
            counts[s[0].value.raw() as usize] += 1;
        }
        let expected = per_cell as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 149.0, "chi2 = {chi2}");
    }

    #[test]
    fn vector_sharing_roundtrip() {
        let f = Field::default();
        let values: Vec<FieldElement> = (0..40).map(|i| f.elem(i * i + 1)).collect();
        let shares = share_vector(&f, &values, 3, &[1, 2, 3, 4, 5], &mut rng()).unwrap();
        assert_eq!(
            reconstruct_vector(&f, &shares[1..4], 3).unwrap(),
            values
        );
        assert!(reconstruct_vector(&f, &shares[..2], 3).is_err());
    }

    #[test]
    fn byte_sharing_roundtrip() {
        let f = Field::default();
        let secret: Vec<u8> = (0..32).map(|i| (i * 7 + 3) as u8).collect();
        let shares = share_bytes(&f, &secret, 3, &[1, 2, 3, 4, 5], &mut rng()).unwrap();
        let back = reconstruct_bytes(&f, &shares[2..], 3, secret.len()).unwrap();
        assert_eq!(back, secret);
    }
}
