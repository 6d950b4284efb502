//! Federated gradient-boosted trees with threshold secret sharing.

pub mod codec;
pub mod config;
pub mod crypto;
pub mod data;
pub mod experiment;
pub mod federation;
pub mod field;
pub mod gbt;
pub mod masking;
pub mod seccmp;
pub mod shamir;
pub mod sim;
