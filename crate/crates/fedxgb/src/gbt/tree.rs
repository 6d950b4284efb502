//! Tree and forest structures shared by both training paths.

use super::loss::{self, Loss};
use super::Instance;
use serde::{Deserialize, Serialize};

/// Model serialization format revision.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        weight: f64,
    },
}

/// Nodes in a flat arena; index 0 is the root. Routing sends feature values
/// strictly below the threshold left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn single_leaf(weight: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    pub fn leaf_index(&self, instance: &Instance) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if instance.feature(*feature) < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn leaf_weight_at(&self, idx: usize) -> f64 {
        match &self.nodes[idx] {
            Node::Leaf { weight } => *weight,
            Node::Split { .. } => unreachable!("leaf index points at a split"),
        }
    }

    pub fn predict(&self, instance: &Instance) -> f64 {
        self.leaf_weight_at(self.leaf_index(instance))
    }

    pub fn internal_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    pub fn leaf_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { weight } => Some(*weight),
                _ => None,
            })
            .collect()
    }
}

/// A boosted ensemble. `trees[r]` holds round r's trees, one per score
/// group (a single tree for logistic, one per class for softmax).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub eta: f64,
    pub loss: Loss,
    pub trees: Vec<Vec<Tree>>,
}

impl Forest {
    pub fn new(eta: f64, loss: Loss) -> Self {
        Forest {
            version: MODEL_FORMAT_VERSION,
            eta,
            loss,
            trees: Vec::new(),
        }
    }

    /// Raw scores per group, starting from zero.
    pub fn predict_scores(&self, instance: &Instance) -> Vec<f64> {
        let mut scores = vec![0.0; self.loss.groups()];
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                scores[c] += self.eta * tree.predict(instance);
            }
        }
        scores
    }

    /// Hard label: thresholded score for logistic, argmax for softmax
    /// (ties resolve to the lowest class).
    pub fn predict_label(&self, instance: &Instance) -> u32 {
        let scores = self.predict_scores(instance);
        match self.loss {
            Loss::Logistic => u32::from(scores[0] > 0.0),
            Loss::Softmax { .. } => {
                let mut best = 0usize;
                for (c, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = c;
                    }
                }
                best as u32
            }
        }
    }

    pub fn accuracy(&self, data: &[Instance], labels: &[u32]) -> f64 {
        let correct = data
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict_label(x) == y)
            .count();
        correct as f64 / data.len().max(1) as f64
    }

    pub fn mean_loss(&self, data: &[Instance], labels: &[u32]) -> f64 {
        let total: f64 = data
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let scores = self.predict_scores(x);
                match self.loss {
                    Loss::Logistic => loss::logistic_loss(scores[0], y as f64),
                    Loss::Softmax { .. } => loss::softmax_loss(&scores, y as usize),
                }
            })
            .sum();
        total / data.len().max(1) as f64
    }
}
