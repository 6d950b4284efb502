//! Versioned run configuration with TOML serialization and validation.

use crate::gbt::BoostParams;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; every stream in a run is derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub boost: BoostParams,
    pub topology: TopologyConfig,
    pub dropout: DropoutConfig,
    pub codec: CodecConfig,
    pub cost: CostConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 1,
            dataset: DatasetConfig::default(),
            boost: BoostParams::default(),
            topology: TopologyConfig::default(),
            dropout: DropoutConfig::default(),
            codec: CodecConfig::default(),
            cost: CostConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Census-style sparse binary corpus (generated, parsed from text).
    Census,
    /// Digits-style image corpus (generated, parsed from IDX bytes).
    Digits,
    /// Dense Gaussian blobs.
    Blobs,
    /// Sparse text file on disk.
    LibsvmFile,
    /// IDX image and label files on disk.
    IdxFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Instances to generate (generated kinds only).
    pub size: usize,
    /// Stratified subsample applied after loading, if set.
    pub subsample: Option<usize>,
    /// Seed for generated corpora, independent of the run seed.
    pub data_seed: u64,
    /// Feature count for `blobs`.
    pub blob_features: u32,
    /// Class count for `blobs`.
    pub blob_classes: u32,
    pub path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Census,
            size: 1000,
            subsample: None,
            data_seed: 7,
            blob_features: 4,
            blob_classes: 2,
            path: None,
            labels_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    /// Participating users (data holders).
    pub users: usize,
    /// Edge aggregators.
    pub edges: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { users: 10, edges: 3 }
    }
}

impl TopologyConfig {
    /// Reconstruction threshold for a user zone of `zone_size` members:
    /// a strict majority plus one, clamped to the zone.
    pub fn user_threshold(zone_size: usize) -> usize {
        (zone_size.div_ceil(2) + 1).clamp(1, zone_size.max(1))
    }

    /// Reconstruction threshold across edges. A strict majority plus one,
    /// capped at `edges - 1` so one edge can act as combiner on foreign
    /// shares alone (single-edge setups degenerate to local evaluation).
    pub fn edge_threshold(edges: usize) -> usize {
        if edges <= 1 {
            1
        } else {
            (edges.div_ceil(2) + 1).min(edges - 1).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutConfig {
    /// Fraction of users dropped at each dropout event.
    pub rate: f64,
    /// Rounds between dropout events (0 disables dropout).
    pub period: usize,
    /// Replacement identities provisioned beyond `users`.
    pub reserve: usize,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            rate: 0.0,
            period: 10,
            reserve: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub fractional_bits: u32,
    /// log2 of the sum headroom reserved above single-value range.
    pub headroom_bits: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            fractional_bits: crate::codec::DEFAULT_FRACTIONAL_BITS,
            headroom_bits: 20,
        }
    }
}

/// Weights for the simulated-cost accounting, in abstract time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub per_share: f64,
    pub per_reconstruct: f64,
    pub per_mask: f64,
    pub per_compare: f64,
    pub per_cipher: f64,
    pub per_byte: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            per_share: 4.0,
            per_reconstruct: 6.0,
            per_mask: 1.0,
            per_compare: 8.0,
            per_cipher: 2.0,
            per_byte: 0.01,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.topology.users == 0 {
            return bad("topology.users must be positive".into());
        }
        if self.topology.edges == 0 {
            return bad("topology.edges must be positive".into());
        }
        if self.topology.edges > self.topology.users {
            return bad(format!(
                "topology.edges {} exceeds users {}",
                self.topology.edges, self.topology.users
            ));
        }
        if !(0.0..=0.3).contains(&self.dropout.rate) {
            return bad(format!(
                "dropout.rate {} not in [0, 0.3]",
                self.dropout.rate
            ));
        }
        if self.dropout.rate > 0.0 && self.dropout.period == 0 {
            return bad("dropout.period must be positive when rate > 0".into());
        }
        let max_drop = (self.topology.users as f64 * self.dropout.rate).floor() as usize;
        let events = if self.dropout.rate > 0.0 && self.dropout.period > 0 {
            self.boost.rounds.div_ceil(self.dropout.period)
        } else {
            0
        };
        if max_drop * events > self.dropout.reserve {
            return bad(format!(
                "dropout.reserve {} cannot cover up to {} drops over {} events",
                self.dropout.reserve,
                max_drop * events,
                events
            ));
        }
        if self.codec.fractional_bits == 0 || self.codec.fractional_bits > 32 {
            return bad(format!(
                "codec.fractional_bits {} not in 1..=32",
                self.codec.fractional_bits
            ));
        }
        if self.codec.headroom_bits == 0 || self.codec.headroom_bits > 40 {
            return bad(format!(
                "codec.headroom_bits {} not in 1..=40",
                self.codec.headroom_bits
            ));
        }
        match self.dataset.kind {
            DatasetKind::Census | DatasetKind::Digits | DatasetKind::Blobs => {
                if self.dataset.size == 0 {
                    return bad("dataset.size must be positive".into());
                }
            }
            DatasetKind::LibsvmFile => {
                if self.dataset.path.is_none() {
                    return bad("dataset.path required for libsvm_file".into());
                }
            }
            DatasetKind::IdxFiles => {
                if self.dataset.path.is_none() || self.dataset.labels_path.is_none() {
                    return bad("dataset.path and dataset.labels_path required for idx_files".into());
                }
            }
        }
        if let Some(sub) = self.dataset.subsample {
            if sub == 0 {
                return bad("dataset.subsample must be positive when set".into());
            }
        }
        self.boost
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, w) in [
            ("per_share", self.cost.per_share),
            ("per_reconstruct", self.cost.per_reconstruct),
            ("per_mask", self.cost.per_mask),
            ("per_compare", self.cost.per_compare),
            ("per_cipher", self.cost.per_cipher),
            ("per_byte", self.cost.per_byte),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("cost.{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            "seed = 99\n[topology]\nusers = 20\nedges = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.topology.users, 20);
        assert_eq!(cfg.boost, BoostParams::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sead = 1\n").is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let err = RunConfig::from_toml_str("version = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Version(2)));
    }

    #[test]
    fn out_of_range_dropout_is_rejected() {
        let err = RunConfig::from_toml_str("[dropout]\nrate = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("dropout.rate"));
    }

    #[test]
    fn dropout_requires_sufficient_reserve() {
        let text = "[topology]\nusers = 10\nedges = 2\n[dropout]\nrate = 0.2\nperiod = 5\nreserve = 1\n";
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("reserve"));
    }

    #[test]
    fn thresholds_follow_majority_rule() {
        assert_eq!(TopologyConfig::user_threshold(4), 3);
        assert_eq!(TopologyConfig::user_threshold(5), 4);
        assert_eq!(TopologyConfig::user_threshold(1), 1);
        assert_eq!(TopologyConfig::edge_threshold(10), 6);
        assert_eq!(TopologyConfig::edge_threshold(3), 2);
        assert_eq!(TopologyConfig::edge_threshold(2), 1);
        assert_eq!(TopologyConfig::edge_threshold(1), 1);
    }

    #[test]
    fn file_kinds_require_paths() {
        let err = RunConfig::from_toml_str("[dataset]\nkind = \"libsvm_file\"\n").unwrap_err();
        assert!(err.to_string().contains("dataset.path"));
    }
}
