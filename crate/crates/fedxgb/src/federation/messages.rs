//! Wire registry: message kinds, payload classes, and typed payloads.
//!
//! Payload bodies are JSON (wire format version 1); the envelope carries
//! the numeric kind. Every kind has a fixed payload class describing what
//! an observer of the wire may see there: control metadata, threshold
//! shares, masked values, ciphertext, or zone-level aggregates.

use crate::crypto::{AgreementPublicKey, SignaturePublicKey};
use crate::field::FieldElement;
use crate::gbt::BoostParams;
use crate::shamir::VectorShare;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::FedError;

pub const WIRE_VERSION: u32 = 1;

/// Raw byte blobs (signatures, ciphertexts) travel as lowercase hex strings.
mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn to_hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Vec<u8>> {
        if s.len() % 2 != 0 {
            return None;
        }
        (0..s.len() / 2)
            .map(|i| {
                s.get(2 * i..2 * i + 2)
                    .and_then(|d| u8::from_str_radix(d, 16).ok())
            })
            .collect()
    }

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected hex digits"))
    }
}

/// Per-peer blob maps with the same hex convention for the values.
mod hex_bytes_map {
    use super::hex_bytes;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u64, Vec<u8>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (*k, hex_bytes::to_hex(v)))
            .collect::<BTreeMap<u64, String>>()
            .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<u64, Vec<u8>>, D::Error> {
        BTreeMap::<u64, String>::deserialize(de)?
            .into_iter()
            .map(|(k, v)| {
                hex_bytes::from_hex(&v)
                    .map(|b| (k, b))
                    .ok_or_else(|| serde::de::Error::custom("expected hex digits"))
            })
            .collect()
    }
}

/// What a network observer sees in a payload of a given kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadClass {
    /// Public protocol metadata: rosters, node ids, feature ids, bits.
    Control,
    /// Threshold shares; individually uniform.
    Share,
    /// Pairwise-and-self masked field elements.
    MaskedValue,
    /// AEAD ciphertext.
    Ciphertext,
    /// Zone-level sums over at least a sharing threshold of users.
    Aggregate,
}

macro_rules! wire_kinds {
    ($($name:ident = $tag:literal => $class:ident),+ $(,)?) => {
        pub mod kind {
            $(pub const $name: u16 = $tag;)+
        }

        /// Payload class for a registered kind; `None` for unknown tags.
        pub fn payload_class(tag: u16) -> Option<PayloadClass> {
            match tag {
                $($tag => Some(PayloadClass::$class),)+
                _ => None,
            }
        }

        pub fn kind_name(tag: u16) -> &'static str {
            match tag {
                $($tag => stringify!($name),)+
                _ => "UNKNOWN",
            }
        }
    };
}

wire_kinds! {
    SETUP_PARAMS = 1 => Control,
    KEY_BUNDLE = 2 => Control,
    KEY_DIRECTORY = 3 => Control,
    SECRET_DEPOSIT = 4 => Ciphertext,
    DEPOSIT_RELAY = 5 => Ciphertext,
    BLIND_SEED = 6 => Ciphertext,
    AGG_REQUEST = 7 => Control,
    MASKED_UPLOAD = 8 => MaskedValue,
    SEED_SHARE_RELAY = 9 => Ciphertext,
    UNMASK_REQUEST = 10 => Control,
    SEED_SHARE_REVEAL = 11 => Share,
    RECOVERY_SHARE = 12 => Share,
    ZONE_AGGREGATE = 13 => Aggregate,
    SPLIT_DECISION = 14 => Share,
    SPLIT_ANNOUNCE = 15 => Control,
    CMP_INPUT = 16 => Share,
    CMP_BLIND = 17 => Share,
    CMP_BITS = 18 => Control,
    LEAF_WEIGHTS = 19 => Control,
    DROP_NOTICE = 20 => Control,
    JOIN_NOTICE = 21 => Control,
    ZONE_UPDATE = 22 => Control,
    DEPTH_DONE = 23 => Control,
}

/// Typed payloads declare their kind tag.
pub trait Wire: Serialize + DeserializeOwned {
    const KIND: u16;
}

pub fn encode<T: Wire>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("payloads serialize")
}

pub fn decode<T: Wire>(bytes: &[u8]) -> Result<T, FedError> {
    serde_json::from_slice(bytes).map_err(|e| FedError::Decode {
        kind: T::KIND,
        reason: e.to_string(),
    })
}

macro_rules! impl_wire {
    ($ty:ident, $tag:expr) => {
        impl Wire for $ty {
            const KIND: u16 = $tag;
        }
    };
}

/// Masking tag binding an upload vector to one aggregation.
pub fn agg_tag(agg_seq: u64) -> Vec<u8> {
    let mut t = Vec::with_capacity(12);
    t.extend_from_slice(b"agg/");
    t.extend_from_slice(&agg_seq.to_le_bytes());
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupParams {
    pub wire_version: u32,
    pub field_p: u64,
    pub fractional_bits: u32,
    /// Comparison operands use one extra bit so candidate midpoints encode
    /// exactly.
    pub cmp_fractional_bits: u32,
    pub headroom_bits: u32,
    pub boost: BoostParams,
    pub n_features: u32,
    pub n_classes: u32,
    /// Number of edge servers; the comparison roster is 1..=edges.
    pub edges: u32,
    /// Public candidate thresholds per feature.
    pub candidates: Vec<Vec<f64>>,
    pub roster_version: u64,
}
impl_wire!(SetupParams, kind::SETUP_PARAMS);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyBundle {
    pub agreement: AgreementPublicKey,
    pub signing: SignaturePublicKey,
    /// Signature over (participant id, agreement, signing).
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}
impl_wire!(KeyBundle, kind::KEY_BUNDLE);

impl KeyBundle {
    /// Canonical bytes bound by the bundle signature.
    pub fn signed_bytes(id: u64, agreement: &AgreementPublicKey, signing: &SignaturePublicKey) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 33 + 33);
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&agreement.0);
        out.extend_from_slice(&signing.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDirectory {
    pub entries: BTreeMap<u64, KeyBundle>,
}
impl_wire!(KeyDirectory, kind::KEY_DIRECTORY);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretDeposit {
    pub roster_version: u64,
    /// Per-peer ciphertext of this user's agreement-secret share.
    #[serde(with = "hex_bytes_map")]
    pub shares: BTreeMap<u64, Vec<u8>>,
}
impl_wire!(SecretDeposit, kind::SECRET_DEPOSIT);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositRelay {
    pub roster_version: u64,
    pub from: u64,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}
impl_wire!(DepositRelay, kind::DEPOSIT_RELAY);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindSeed {
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}
impl_wire!(BlindSeed, kind::BLIND_SEED);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub user: u64,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRequest {
    pub agg_seq: u64,
    pub round: u32,
    pub group: u16,
    pub depth: u16,
    /// Frontier nodes in creation order; fixes the upload layout.
    pub nodes: Vec<u32>,
    /// This tree's feature subsample, ascending.
    pub features: Vec<u32>,
    pub rosters: BTreeMap<u32, Vec<RosterEntry>>,
    pub roster_version: u64,
}
impl_wire!(AggRequest, kind::AGG_REQUEST);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedUpload {
    pub agg_seq: u64,
    pub values: Vec<FieldElement>,
    /// Per-peer ciphertext of a share of this upload's self-mask seed.
    #[serde(with = "hex_bytes_map")]
    pub seed_shares: BTreeMap<u64, Vec<u8>>,
}
impl_wire!(MaskedUpload, kind::MASKED_UPLOAD);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedShareRelay {
    pub agg_seq: u64,
    pub from: u64,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}
impl_wire!(SeedShareRelay, kind::SEED_SHARE_RELAY);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmaskRequest {
    pub agg_seq: u64,
    pub survivors: Vec<u64>,
    /// Roster members whose upload is excluded; peers must reveal their
    /// recovery shares, never their seed shares.
    pub dropped: Vec<u64>,
}
impl_wire!(UnmaskRequest, kind::UNMASK_REQUEST);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedShareReveal {
    pub agg_seq: u64,
    /// Owner -> this revealer's share of the owner's self-mask seed.
    pub shares: BTreeMap<u64, VectorShare>,
}
impl_wire!(SeedShareReveal, kind::SEED_SHARE_REVEAL);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryShare {
    pub agg_seq: u64,
    /// Dropped owner -> this revealer's share of the owner's agreement secret.
    pub shares: BTreeMap<u64, VectorShare>,
}
impl_wire!(RecoveryShare, kind::RECOVERY_SHARE);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneAggregate {
    pub agg_seq: u64,
    pub zone: u32,
    pub round: u32,
    /// False when too few survivors remained to unmask; values then empty.
    pub ok: bool,
    pub values: Vec<FieldElement>,
}
impl_wire!(ZoneAggregate, kind::ZONE_AGGREGATE);

/// Coordinates naming one comparison wave. `catchup_user` is set when the
/// wave replays a stored tree for one newcomer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhaseId {
    pub round: u32,
    pub group: u16,
    pub depth: u16,
    pub catchup_user: Option<u64>,
}

impl PhaseId {
    pub fn tag(&self, instance: u64) -> Vec<u8> {
        let mut t = Vec::with_capacity(24);
        t.extend_from_slice(&self.round.to_le_bytes());
        t.extend_from_slice(&self.group.to_le_bytes());
        t.extend_from_slice(&self.depth.to_le_bytes());
        t.extend_from_slice(&self.catchup_user.unwrap_or(0).to_le_bytes());
        t.extend_from_slice(&instance.to_le_bytes());
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub phase: PhaseId,
    /// Nodes being split, aligned with the threshold share vector.
    pub nodes: Vec<u32>,
    pub threshold_shares: VectorShare,
}
impl_wire!(SplitDecision, kind::SPLIT_DECISION);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub node: u32,
    pub feature: u32,
    pub left: u32,
    pub right: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAnnounce {
    pub phase: PhaseId,
    pub splits: Vec<SplitInfo>,
    /// Frontier nodes that became leaves at this depth.
    pub leaves: Vec<u32>,
}
impl_wire!(SplitAnnounce, kind::SPLIT_ANNOUNCE);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmpItem {
    pub instance: u64,
    pub node: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmpInput {
    pub phase: PhaseId,
    pub items: Vec<CmpItem>,
    pub share: VectorShare,
}
impl_wire!(CmpInput, kind::CMP_INPUT);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmpBlind {
    pub phase: PhaseId,
    pub user: u64,
    pub items: Vec<CmpItem>,
    pub share: VectorShare,
}
impl_wire!(CmpBlind, kind::CMP_BLIND);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmpBits {
    pub phase: PhaseId,
    pub items: Vec<CmpItem>,
    /// True routes right (value at or above threshold), false routes left.
    pub bits: Vec<bool>,
}
impl_wire!(CmpBits, kind::CMP_BITS);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafWeights {
    pub round: u32,
    pub group: u16,
    pub leaves: Vec<(u32, f64)>,
    pub catchup: bool,
}
impl_wire!(LeafWeights, kind::LEAF_WEIGHTS);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropNotice {
    pub user: u64,
}
impl_wire!(DropNotice, kind::DROP_NOTICE);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinNotice {
    pub user: u64,
    pub replaces: u64,
}
impl_wire!(JoinNotice, kind::JOIN_NOTICE);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneUpdate {
    pub roster_version: u64,
    pub zone: u32,
    pub members: Vec<RosterEntry>,
    pub joined: Option<u64>,
    pub left: Vec<u64>,
}
impl_wire!(ZoneUpdate, kind::ZONE_UPDATE);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthDone {
    pub phase: PhaseId,
    pub user: u64,
}
impl_wire!(DepthDone, kind::DEPTH_DONE);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldElement;

    #[test]
    fn registry_covers_all_kinds_with_classes() {
        for tag in 1..=23u16 {
            assert!(payload_class(tag).is_some(), "kind {tag} unregistered");
            assert_ne!(kind_name(tag), "UNKNOWN");
        }
        assert!(payload_class(0).is_none());
        assert!(payload_class(24).is_none());
        assert_eq!(payload_class(kind::MASKED_UPLOAD), Some(PayloadClass::MaskedValue));
        assert_eq!(payload_class(kind::CMP_BLIND), Some(PayloadClass::Share));
        assert_eq!(payload_class(kind::SECRET_DEPOSIT), Some(PayloadClass::Ciphertext));
    }

    #[test]
    fn payloads_round_trip() {
        let msg = MaskedUpload {
            agg_seq: 9,
            values: vec![FieldElement::ONE, FieldElement::ZERO],
            seed_shares: BTreeMap::from([(1001, vec![1, 2, 3])]),
        };
        let bytes = encode(&msg);
        let back: MaskedUpload = decode(&bytes).unwrap();
        assert_eq!(back, msg);

        let err = decode::<ZoneAggregate>(&bytes).unwrap_err();
        assert!(matches!(err, FedError::Decode { kind, .. } if kind == kind::ZONE_AGGREGATE));
    }

    #[test]
    fn phase_tags_separate_instances_and_phases() {
        let a = PhaseId { round: 1, group: 0, depth: 2, catchup_user: None };
        let b = PhaseId { round: 1, group: 0, depth: 2, catchup_user: Some(7) };
        assert_ne!(a.tag(5), b.tag(5));
        assert_ne!(a.tag(5), a.tag(6));
        assert_eq!(a.tag(5), a.tag(5));
    }
}
