//! Dataset loading, partitioning, and synthetic corpora.
//!
//! Feature values are snapped to the fixed-point grid when a dataset is
//! assembled, so every comparison made later (in the clear or under
//! sharing) sees exactly representable values.

pub mod idx;
pub mod libsvm;
pub mod partition;
pub mod synthetic;

use crate::codec::{CodecError, FixedPointCodec};
use crate::gbt::Instance;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unexpected end of input: {0}")]
    Truncated(String),
    #[error("bad magic number {0:#010x}")]
    BadMagic(u32),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: i64, classes: u32 },
    #[error("feature value unencodable: {0}")]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labelled sparse dataset with grid-aligned feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub labels: Vec<u32>,
    pub n_features: u32,
    pub n_classes: u32,
}

impl Dataset {
    /// Assemble a dataset, snapping every feature value to the codec grid.
    pub fn new(
        raw: Vec<Instance>,
        labels: Vec<u32>,
        n_features: u32,
        n_classes: u32,
        codec: &FixedPointCodec,
    ) -> Result<Self, DataError> {
        assert_eq!(raw.len(), labels.len(), "instance and label counts differ");
        for &y in &labels {
            if y >= n_classes {
                return Err(DataError::LabelRange {
                    label: y as i64,
                    classes: n_classes,
                });
            }
        }
        let instances = raw
            .into_iter()
            .map(|inst| {
                let feats = inst
                    .features
                    .into_iter()
                    .map(|(f, v)| Ok((f, codec.quantize(v)?)))
                    .collect::<Result<Vec<_>, CodecError>>()?;
                Ok(Instance { features: feats })
            })
            .collect::<Result<Vec<_>, CodecError>>()?;
        Ok(Self {
            instances,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Restrict to the given instance indices (order preserved).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::with_defaults(Field::default())
    }

    #[test]
    fn assembly_snaps_values_to_grid() {
        let raw = vec![Instance::new(vec![(0, 0.1), (2, 1.0)])];
        let ds = Dataset::new(raw, vec![0], 3, 2, &codec()).unwrap();
        let v = ds.instances[0].feature(0);
        assert_ne!(v, 0.1, "0.1 is not on the dyadic grid");
        assert!((v - 0.1).abs() < 1.0 / 65536.0);
        assert_eq!(ds.instances[0].feature(2), 1.0);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let raw = vec![Instance::new(vec![])];
        let err = Dataset::new(raw, vec![5], 1, 2, &codec()).unwrap_err();
        assert!(matches!(err, DataError::LabelRange { label: 5, classes: 2 }));
    }

    #[test]
    fn select_preserves_order_and_metadata() {
        let raw = vec![
            Instance::new(vec![(0, 1.0)]),
            Instance::new(vec![(0, 2.0)]),
            Instance::new(vec![(0, 3.0)]),
        ];
        let ds = Dataset::new(raw, vec![0, 1, 0], 1, 2, &codec()).unwrap();
        let sub = ds.select(&[2, 0]);
        assert_eq!(sub.labels, vec![0, 0]);
        assert_eq!(sub.instances[0].feature(0), 3.0);
        assert_eq!(sub.n_features, 1);
    }
}
