//! Abstract cost accounting: operation counts weighted into simulated time.

use crate::config::CostConfig;
use serde::{Deserialize, Serialize};

/// Counts of the protocol's unit operations. Participants keep their own
/// ledger; the harness sums them and adds transport bytes from the bus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub shares: u64,
    pub reconstructs: u64,
    pub masks: u64,
    pub compares: u64,
    pub ciphers: u64,
}

impl CostLedger {
    pub fn merge(&mut self, other: &CostLedger) {
        self.shares += other.shares;
        self.reconstructs += other.reconstructs;
        self.masks += other.masks;
        self.compares += other.compares;
        self.ciphers += other.ciphers;
    }

    /// Weighted simulated time in abstract units.
    pub fn simulated_time(&self, weights: &CostConfig, bytes: u64) -> f64 {
        self.shares as f64 * weights.per_share
            + self.reconstructs as f64 * weights.per_reconstruct
            + self.masks as f64 * weights.per_mask
            + self.compares as f64 * weights.per_compare
            + self.ciphers as f64 * weights.per_cipher
            + bytes as f64 * weights.per_byte
    }
}
