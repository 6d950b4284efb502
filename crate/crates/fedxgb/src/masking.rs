//! Pairwise masking for single-round secure aggregation.
//!
//! Each uploader hides its value as
//!   masked = s + r_u + sum_{v < u} m_{u,v} - sum_{v > u} m_{u,v}
//! where r_u is a fresh self mask (threshold-shared to the roster) and
//! m_{u,v} is derived from the pair's agreed key, the round, and an
//! aggregation tag. Summing over a full roster cancels every pairwise term;
//! subtracting reconstructed self masks yields the exact aggregate. If an
//! uploader drops out, survivors reconstruct its mask key and add a pairwise
//! correction instead of re-running the round.

use crate::crypto::{self, AgreementKeyPair, AgreementPublicKey, SharedKey};
use crate::field::{Field, FieldElement};
use crate::shamir::{self, ShamirError, VectorShare};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask keyring has no entry for peer {0}")]
    UnknownPeer(u32),
    #[error("masked uploads and self masks disagree: {uploads} uploads, {masks} masks")]
    IncompleteRound { uploads: usize, masks: usize },
    #[error(transparent)]
    Shares(#[from] ShamirError),
    #[error("reconstructed mask key is invalid")]
    BadRecoveredKey,
}

/// Mask for one ordered pair in one aggregation. Fresh per (round, tag):
/// reusing a round/tag pair would let aggregates cancel across rounds.
pub fn derive_pairwise_mask(
    field: &Field,
    key: &SharedKey,
    round: u32,
    tag: &[u8],
) -> FieldElement {
    let mut h = Sha256::new();
    h.update(b"fedxgb/pair-mask/v1");
    h.update(key.0);
    h.update(round.to_le_bytes());
    h.update((tag.len() as u32).to_le_bytes());
    h.update(tag);
    let digest = h.finalize();
    // 128 of the 256 digest bits reduced mod p: bias below 2^-64.
    let wide = u128::from_le_bytes(digest[..16].try_into().unwrap());
    field.elem((wide % field.modulus() as u128) as u64)
}

/// Fresh uniform self mask.
pub fn fresh_self_mask<R: rand::Rng + ?Sized>(field: &Field, rng: &mut R) -> FieldElement {
    field.rand_elem(rng)
}

/// Self mask expanded from a per-aggregation seed. Sharing the 32-byte seed
/// instead of a full mask vector keeps threshold deposits small; revealing
/// the seed exposes only this aggregation's self masks, never pairwise ones.
pub fn derive_self_mask(field: &Field, seed: &[u8; 32], round: u32, tag: &[u8]) -> FieldElement {
    let mut h = Sha256::new();
    h.update(b"fedxgb/self-mask/v1");
    h.update(seed);
    h.update(round.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag);
    let digest = h.finalize();
    let wide = u128::from_le_bytes(digest[..16].try_into().unwrap());
    field.elem((wide % field.modulus() as u128) as u64)
}

/// The full self-mask vector for an upload of length `len` under one seed.
pub fn self_mask_vector(
    field: &Field,
    seed: &[u8; 32],
    round: u32,
    tag: &[u8],
    len: usize,
) -> Vec<FieldElement> {
    (0..len)
        .map(|k| derive_self_mask(field, seed, round, &element_tag(tag, k)))
        .collect()
}

/// One user's per-round masking state: its roster index and the agreed key
/// for every live peer. Iteration order is fixed by the index ordering.
#[derive(Clone)]
pub struct MaskKeyring {
    my_index: u32,
    peers: BTreeMap<u32, SharedKey>,
}

impl MaskKeyring {
    pub fn new(my_index: u32) -> Self {
        MaskKeyring {
            my_index,
            peers: BTreeMap::new(),
        }
    }

    pub fn my_index(&self) -> u32 {
        self.my_index
    }

    pub fn insert_peer(&mut self, index: u32, key: SharedKey) {
        debug_assert_ne!(index, self.my_index);
        self.peers.insert(index, key);
    }

    pub fn remove_peer(&mut self, index: u32) {
        self.peers.remove(&index);
    }

    pub fn peer_indices(&self) -> Vec<u32> {
        self.peers.keys().copied().collect()
    }

    /// Net pairwise term this user folds into an upload for (round, tag).
    fn pairwise_term(&self, field: &Field, round: u32, tag: &[u8]) -> FieldElement {
        let mut acc = FieldElement::ZERO;
        for (&peer, key) in &self.peers {
            let m = derive_pairwise_mask(field, key, round, tag);
            acc = if self.my_index > peer {
                field.add(acc, m)
            } else {
                field.sub(acc, m)
            };
        }
        acc
    }

    /// Mask one value for upload.
    pub fn mask(
        &self,
        field: &Field,
        secret: FieldElement,
        self_mask: FieldElement,
        round: u32,
        tag: &[u8],
    ) -> FieldElement {
        let base = field.add(secret, self_mask);
        field.add(base, self.pairwise_term(field, round, tag))
    }

    /// Mask a vector under one self-mask vector; element k is tagged
    /// (tag, k) so every component gets an independent pairwise mask.
    pub fn mask_vector(
        &self,
        field: &Field,
        secrets: &[FieldElement],
        self_masks: &[FieldElement],
        round: u32,
        tag: &[u8],
    ) -> Vec<FieldElement> {
        debug_assert_eq!(secrets.len(), self_masks.len());
        secrets
            .iter()
            .zip(self_masks)
            .enumerate()
            .map(|(k, (&s, &r))| self.mask(field, s, r, round, &element_tag(tag, k)))
            .collect()
    }
}

/// Per-element tag for vector uploads.
pub fn element_tag(tag: &[u8], k: usize) -> Vec<u8> {
    let mut t = Vec::with_capacity(tag.len() + 9);
    t.extend_from_slice(tag);
    t.push(0x1f);
    t.extend_from_slice(&(k as u64).to_le_bytes());
    t
}

/// Sum masked uploads from a complete live roster and remove the
/// reconstructed self masks. Pairwise terms cancel only when `masked`
/// covers exactly the roster the uploads were masked against.
pub fn unmask_aggregate(
    field: &Field,
    masked: &[FieldElement],
    self_masks: &[FieldElement],
) -> Result<FieldElement, MaskError> {
    if masked.len() != self_masks.len() {
        return Err(MaskError::IncompleteRound {
            uploads: masked.len(),
            masks: self_masks.len(),
        });
    }
    let total = field.sum(masked.iter().copied());
    let masks = field.sum(self_masks.iter().copied());
    Ok(field.sub(total, masks))
}

/// Correction added to an aggregate whose uploads were masked against a
/// roster containing `dropped_index`, when that member's upload is excluded:
/// the sum over survivors v of +-m_{dropped,v}, signed from the dropped
/// member's perspective.
pub fn pairwise_correction(
    field: &Field,
    dropped_index: u32,
    survivor_keys: &[(u32, SharedKey)],
    round: u32,
    tag: &[u8],
) -> FieldElement {
    let mut acc = FieldElement::ZERO;
    for (peer, key) in survivor_keys {
        let m = derive_pairwise_mask(field, key, round, tag);
        acc = if dropped_index > *peer {
            field.add(acc, m)
        } else {
            field.sub(acc, m)
        };
    }
    acc
}

/// Vector variant of [`pairwise_correction`] matching [`MaskKeyring::mask_vector`].
pub fn pairwise_correction_vector(
    field: &Field,
    dropped_index: u32,
    survivor_keys: &[(u32, SharedKey)],
    round: u32,
    tag: &[u8],
    len: usize,
) -> Vec<FieldElement> {
    (0..len)
        .map(|k| pairwise_correction(field, dropped_index, survivor_keys, round, &element_tag(tag, k)))
        .collect()
}

/// Rebuild a dropped member's mask keypair from threshold shares of its
/// 32-byte private scalar, then derive the pairwise keys needed for the
/// correction from the survivors' public keys.
pub fn recover_mask_keys(
    field: &Field,
    key_shares: &[VectorShare],
    t: usize,
    survivors: &[(u32, AgreementPublicKey)],
) -> Result<Vec<(u32, SharedKey)>, MaskError> {
    let bytes = shamir::reconstruct_bytes(field, key_shares, t, 32)?;
    let pair = AgreementKeyPair::from_secret_bytes(&bytes).map_err(|_| MaskError::BadRecoveredKey)?;
    survivors
        .iter()
        .map(|(idx, pk)| {
            crypto::key_agree(&pair, pk)
                .map(|k| (*idx, k))
                .map_err(|_| MaskError::BadRecoveredKey)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    struct Domain {
        field: Field,
        pairs: Vec<AgreementKeyPair>,
        keyrings: Vec<MaskKeyring>,
    }

    /// Build a fully-keyed domain of n users with roster indices 1..=n.
    fn domain(n: usize, rng: &mut ChaCha20Rng) -> Domain {
        let field = Field::default();
        let pairs: Vec<AgreementKeyPair> =
            (0..n).map(|_| AgreementKeyPair::generate(rng)).collect();
        let mut keyrings: Vec<MaskKeyring> =
            (1..=n as u32).map(MaskKeyring::new).collect();
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    let key = crypto::key_agree(&pairs[u], &pairs[v].public()).unwrap();
                    keyrings[u].insert_peer(v as u32 + 1, key);
                }
            }
        }
        Domain {
            field,
            pairs,
            keyrings,
        }
    }

    /// Plaintext oracle: the aggregate is just the field sum of the inputs.
    fn oracle_sum(field: &Field, values: &[FieldElement]) -> FieldElement {
        field.sum(values.iter().copied())
    }

    #[test]
    fn masking_with_no_peers_is_value_plus_self_mask() {
        let field = Field::default();
        let ring = MaskKeyring::new(1);
        let s = field.elem(123);
        let r = field.elem(999);
        assert_eq!(ring.mask(&field, s, r, 0, b"t"), field.add(s, r));
    }

    #[test]
    fn two_user_masks_cancel_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let d = domain(2, &mut rng);
        let values = [d.field.elem(10), d.field.from_i128(-3)];
        let self_masks = [d.field.elem(500), d.field.elem(600)];
        let masked: Vec<FieldElement> = (0..2)
            .map(|u| d.keyrings[u].mask(&d.field, values[u], self_masks[u], 7, b"node0"))
            .collect();
        let agg = unmask_aggregate(&d.field, &masked, &self_masks).unwrap();
        assert_eq!(agg, oracle_sum(&d.field, &values));
    }

    #[test]
    fn thirty_user_domain_matches_plaintext_sum_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let d = domain(30, &mut rng);
        let values: Vec<FieldElement> = (0..30)
            .map(|_| d.field.from_i128(rng.gen_range(-1_000_000i128..1_000_000)))
            .collect();
        let self_masks: Vec<FieldElement> = (0..30)
            .map(|_| fresh_self_mask(&d.field, &mut rng))
            .collect();
        let masked: Vec<FieldElement> = (0..30)
            .map(|u| d.keyrings[u].mask(&d.field, values[u], self_masks[u], 3, b"agg"))
            .collect();
        // Masked uploads are not the values themselves.
        assert!(masked.iter().zip(&values).any(|(m, v)| m != v));
        let agg = unmask_aggregate(&d.field, &masked, &self_masks).unwrap();
        assert_eq!(agg, oracle_sum(&d.field, &values));
    }

    #[test]
    fn vector_masking_cancels_per_element() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let d = domain(5, &mut rng);
        let len = 17;
        let per_user: Vec<Vec<FieldElement>> = (0..5)
            .map(|_| (0..len).map(|_| d.field.rand_elem(&mut rng)).collect())
            .collect();
        let self_masks: Vec<Vec<FieldElement>> = (0..5)
            .map(|_| (0..len).map(|_| d.field.rand_elem(&mut rng)).collect())
            .collect();
        let masked: Vec<Vec<FieldElement>> = (0..5)
            .map(|u| d.keyrings[u].mask_vector(&d.field, &per_user[u], &self_masks[u], 1, b"vec"))
            .collect();
        for k in 0..len {
            let col: Vec<FieldElement> = masked.iter().map(|m| m[k]).collect();
            let col_masks: Vec<FieldElement> = self_masks.iter().map(|m| m[k]).collect();
            let expected = d.field.sum(per_user.iter().map(|v| v[k]));
            assert_eq!(
                unmask_aggregate(&d.field, &col, &col_masks).unwrap(),
                expected
            );
        }
    }

    #[test]
    fn masks_differ_across_rounds_and_tags() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let a = AgreementKeyPair::generate(&mut rng);
        let b = AgreementKeyPair::generate(&mut rng);
        let key = crypto::key_agree(&a, &b.public()).unwrap();
        let field = Field::default();
        let m1 = derive_pairwise_mask(&field, &key, 1, b"x");
        let m2 = derive_pairwise_mask(&field, &key, 2, b"x");
        let m3 = derive_pairwise_mask(&field, &key, 1, b"y");
        assert_ne!(m1, m2);
        assert_ne!(m1, m3);
        assert_eq!(m1, derive_pairwise_mask(&field, &key, 1, b"x"));
    }

    #[test]
    fn derived_masks_look_uniform() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let a = AgreementKeyPair::generate(&mut rng);
        let b = AgreementKeyPair::generate(&mut rng);
        let key = crypto::key_agree(&a, &b.public()).unwrap();
        let field = Field::default();
        const BINS: usize = 64;
        let mut counts = [0u64; BINS];
        let draws = 100_000u32;
        let bin_width = field.modulus() / BINS as u64 + 1;
        for i in 0..draws {
            let m = derive_pairwise_mask(&field, &key, i, b"uniformity");
            counts[(m.raw() / bin_width) as usize] += 1;
        }
        let expected = draws as f64 / BINS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 0.001 tail for 63 degrees of freedom is ~106.
        assert!(chi2 < 106.0, "chi2 = {chi2}");
    }

    #[test]
    fn dropout_correction_restores_survivor_sum() {
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        let n = 8;
        let d = domain(n, &mut rng);
        let values: Vec<FieldElement> = (0..n).map(|_| d.field.rand_elem(&mut rng)).collect();
        let self_masks: Vec<FieldElement> =
            (0..n).map(|_| fresh_self_mask(&d.field, &mut rng)).collect();
        let masked: Vec<FieldElement> = (0..n)
            .map(|u| d.keyrings[u].mask(&d.field, values[u], self_masks[u], 9, b"drop"))
            .collect();

        let dropped = 2usize; // roster index 3
        let survivors: Vec<usize> = (0..n).filter(|&u| u != dropped).collect();
        let masked_live: Vec<FieldElement> = survivors.iter().map(|&u| masked[u]).collect();
        let self_live: Vec<FieldElement> = survivors.iter().map(|&u| self_masks[u]).collect();
        let partial = unmask_aggregate(&d.field, &masked_live, &self_live).unwrap();

        // Recover the dropped member's key from threshold shares and correct.
        let roster: Vec<u32> = (1..=n as u32).collect();
        let key_shares = shamir::share_bytes(
            &d.field,
            &d.pairs[dropped].secret_bytes(),
            5,
            &roster,
            &mut rng,
        )
        .unwrap();
        let survivor_pubs: Vec<(u32, AgreementPublicKey)> = survivors
            .iter()
            .map(|&u| (u as u32 + 1, d.pairs[u].public()))
            .collect();
        let held: Vec<VectorShare> = survivors[..5]
            .iter()
            .map(|&u| key_shares[u].clone())
            .collect();
        let keys = recover_mask_keys(&d.field, &held, 5, &survivor_pubs).unwrap();
        let correction = pairwise_correction(&d.field, dropped as u32 + 1, &keys, 9, b"drop");

        let fixed = d.field.add(partial, correction);
        let expected = d.field.sum(survivors.iter().map(|&u| values[u]));
        assert_eq!(fixed, expected);
        // Without the correction the aggregate is wrong.
        assert_ne!(partial, expected);
    }

    #[test]
    fn recovery_below_threshold_is_refused() {
        let mut rng = ChaCha20Rng::seed_from_u64(27);
        let d = domain(4, &mut rng);
        let roster = [1u32, 2, 3, 4];
        let shares = shamir::share_bytes(
            &d.field,
            &d.pairs[0].secret_bytes(),
            3,
            &roster,
            &mut rng,
        )
        .unwrap();
        let survivor_pubs = vec![(2u32, d.pairs[1].public())];
        let err = recover_mask_keys(&d.field, &shares[..2], 3, &survivor_pubs).unwrap_err();
        assert!(matches!(err, MaskError::Shares(_)));
    }

    #[test]
    fn mismatched_upload_and_mask_counts_are_rejected() {
        let field = Field::default();
        let err = unmask_aggregate(&field, &[FieldElement::ZERO], &[]).unwrap_err();
        assert_eq!(
            err,
            MaskError::IncompleteRound {
                uploads: 1,
                masks: 0
            }
        );
    }

    #[test]
    fn seed_derived_self_masks_separate_rounds_tags_and_elements() {
        let field = Field::default();
        let seed = [9u8; 32];
        let a = derive_self_mask(&field, &seed, 1, b"agg");
        assert_eq!(a, derive_self_mask(&field, &seed, 1, b"agg"));
        assert_ne!(a, derive_self_mask(&field, &seed, 2, b"agg"));
        assert_ne!(a, derive_self_mask(&field, &seed, 1, b"other"));
        assert_ne!(a, derive_self_mask(&field, &[8u8; 32], 1, b"agg"));
        let v = self_mask_vector(&field, &seed, 1, b"agg", 4);
        assert_eq!(v.len(), 4);
        assert_ne!(v[0], v[1]);
        assert_eq!(v[2], derive_self_mask(&field, &seed, 1, &element_tag(b"agg", 2)));
    }
}
