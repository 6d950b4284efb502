//! Single-process network simulation: a FIFO bus with a tamper-evident
//! transcript, cost accounting, and run metrics.

pub mod bus;
pub mod cost;
pub mod metrics;

pub use bus::{Bus, Envelope, NETWORK_ID};
pub use cost::CostLedger;
pub use metrics::{RoundRecord, RunMetrics, RunSummary};
