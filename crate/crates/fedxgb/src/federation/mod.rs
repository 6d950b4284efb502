//! Three-tier federated boosting: users hold data, edge aggregators unmask
//! zone sums and run share-space comparisons, a central coordinator grows
//! the trees.
//!
//! Participant ids: central is 0, edges are 1..=theta, users start at 1000,
//! and the network notifier is u64::MAX. Each edge owns one user zone.
//! Within a zone users carry stable secret-sharing indices; across edges
//! the sharing index equals the edge id.

pub mod central;
pub mod edge;
pub mod messages;
pub mod runner;
pub mod user;

use thiserror::Error;

pub const CENTRAL_ID: u64 = 0;
pub const USER_ID_BASE: u64 = 1000;

pub fn edge_id(zone: u32) -> u64 {
    zone as u64
}

pub fn user_id(slot: usize) -> u64 {
    USER_ID_BASE + slot as u64
}

/// A message a node wants sent; the runner moves it onto the bus.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: u64,
    pub kind: u16,
    pub round: u32,
    pub payload: Vec<u8>,
}

pub fn outgoing<T: messages::Wire>(to: u64, round: u32, msg: &T) -> Outgoing {
    Outgoing {
        to,
        kind: T::KIND,
        round,
        payload: messages::encode(msg),
    }
}

/// Field elements per node in an aggregation upload: count, g, h, then
/// (count_left, gl, hl) for every candidate of every requested feature.
pub fn upload_stride(features: &[u32], candidates: &[Vec<f64>]) -> usize {
    let cands: usize = features
        .iter()
        .map(|&f| candidates[f as usize].len())
        .sum();
    3 + 3 * cands
}

/// Shared run parameters, reconstructed by every participant from the
/// setup broadcast.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub field: crate::field::Field,
    pub codec: crate::codec::FixedPointCodec,
    /// Comparison codec with one extra fractional bit, so candidate
    /// midpoints between grid values encode exactly.
    pub cmp_codec: crate::codec::FixedPointCodec,
    pub boost: crate::gbt::BoostParams,
    pub n_features: u32,
    pub n_classes: u32,
    pub candidates: Vec<Vec<f64>>,
}

impl RunContext {
    pub fn from_setup(msg: &messages::SetupParams) -> Result<Self, FedError> {
        let field = crate::field::Field::new(msg.field_p)
            .map_err(|e| FedError::Protocol(e.to_string()))?;
        let headroom = 1u64 << msg.headroom_bits;
        let mk = |bits: u32| {
            crate::codec::FixedPointCodec::new(field, bits, headroom)
                .map_err(|e| FedError::Protocol(e.to_string()))
        };
        Ok(RunContext {
            field,
            codec: mk(msg.fractional_bits)?,
            cmp_codec: mk(msg.cmp_fractional_bits)?,
            boost: msg.boost.clone(),
            n_features: msg.n_features,
            n_classes: msg.n_classes,
            candidates: msg.candidates.clone(),
        })
    }
}

#[derive(Debug, Error)]
pub enum FedError {
    #[error("wire decode failed for kind {kind}: {reason}")]
    Decode { kind: u16, reason: String },
    #[error("unexpected message kind {kind} in state {state}")]
    UnexpectedMessage { kind: u16, state: String },
    #[error("protocol invariant violated: {0}")]
    Protocol(String),
    #[error("field element out of range in payload")]
    ElementRange,
    #[error(transparent)]
    Shares(#[from] crate::shamir::ShamirError),
    #[error(transparent)]
    Masks(#[from] crate::masking::MaskError),
    #[error(transparent)]
    Compare(#[from] crate::seccmp::CmpError),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error(transparent)]
    Boost(#[from] crate::gbt::GbtError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}
