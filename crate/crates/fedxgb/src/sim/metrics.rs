//! Per-round run metrics with a deterministic CSV rendering and a JSON
//! summary. The CSV holds only simulation-derived quantities, so two runs
//! of the same configuration render byte-identical files; wall-clock time
//! appears only in the JSON summary.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub active_users: usize,
    pub dropped_users: usize,
    /// Envelopes sent during this round.
    pub messages: u64,
    /// Payload bytes sent during this round.
    pub bytes: u64,
    /// Cumulative simulated time at round end, in abstract units.
    pub sim_time: f64,
    pub train_accuracy: Option<f64>,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub users: usize,
    pub edges: usize,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub total_messages: u64,
    pub total_bytes: u64,
    pub sim_time: f64,
    pub transcript: String,
    /// Wall-clock milliseconds; informational only and not reproducible.
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rounds: Vec<RoundRecord>,
    pub summary: RunSummary,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,active_users,dropped_users,messages,bytes,sim_time,train_accuracy,train_loss\n",
        );
        for r in &self.rounds {
            let acc = r.train_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let loss = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.round, r.active_users, r.dropped_users, r.messages, r.bytes, r.sim_time, acc, loss
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}
