//! Gradient-boosted decision trees: losses, split scoring, tree structures,
//! and a plaintext trainer.
//!
//! The plaintext trainer is the reference the federated protocol is checked
//! against. Both paths share the candidate enumeration, the feature
//! subsample stream, per-instance gradient quantization to the fixed-point
//! grid, and the split-choice kernel in [`split`]; they differ only in how
//! per-node gradient sums are aggregated.

pub mod loss;
pub mod split;
pub mod train;
pub mod tree;

pub use loss::Loss;
pub use split::{choose_split, leaf_weight, split_score, CandidateSums, ChosenSplit};
pub use train::{all_candidates, subsample_features, train_plaintext};
pub use tree::{Forest, Node, Tree};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GbtError {
    #[error("{context}: split score is not finite")]
    NonFiniteScore { context: String },
    #[error("negative hessian sum {h}")]
    NegativeHessian { h: f64 },
    #[error("invalid boosting configuration: {0}")]
    Config(String),
}

/// One training example: sparse features sorted by id; absent ids read 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vec<(u32, f64)>,
}

impl Instance {
    pub fn new(mut features: Vec<(u32, f64)>) -> Self {
        features.sort_by_key(|&(id, _)| id);
        Instance { features }
    }

    pub fn feature(&self, id: u32) -> f64 {
        match self.features.binary_search_by_key(&id, |&(f, _)| f) {
            Ok(pos) => self.features[pos].1,
            Err(_) => 0.0,
        }
    }
}

/// First- and second-order gradient of the loss at one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientPair {
    pub g: f64,
    pub h: f64,
}

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostParams {
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_depth: usize,
    pub rounds: usize,
    /// Features drawn per tree.
    pub feature_subsample: usize,
    /// Cap on split candidates per feature.
    pub max_candidates: usize,
    /// Nodes with fewer instances become leaves.
    pub min_node_instances: usize,
    pub loss: Loss,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            eta: 0.3,
            gamma: 0.1,
            lambda: 1.0,
            max_depth: 3,
            rounds: 10,
            feature_subsample: 100,
            max_candidates: 32,
            min_node_instances: 1,
            loss: Loss::Logistic,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), GbtError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(GbtError::Config(format!("eta {} not in (0, 1]", self.eta)));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(GbtError::Config("lambda and gamma must be >= 0".into()));
        }
        if self.max_depth == 0 || self.max_depth > 16 {
            return Err(GbtError::Config(format!(
                "max_depth {} not in 1..=16",
                self.max_depth
            )));
        }
        if self.rounds == 0 {
            return Err(GbtError::Config("rounds must be positive".into()));
        }
        if self.feature_subsample == 0 || self.max_candidates == 0 {
            return Err(GbtError::Config(
                "feature_subsample and max_candidates must be positive".into(),
            ));
        }
        Ok(())
    }
}
