//! Seeded synthetic corpora shaped like the common benchmark sets.
//!
//! The census-style generator emits real parser input (sparse text with
//! 123 one-hot features), and the digits-style generator emits real IDX
//! bytes, so loading a synthetic corpus exercises the same code paths as
//! loading a downloaded one.

use super::idx::{self, Images};
use super::libsvm::{self, SparseRows};
use super::{DataError, Dataset};
use crate::codec::FixedPointCodec;
use crate::gbt::Instance;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// One-hot group widths for the census-style corpus; they sum to 123.
const CENSUS_GROUPS: [usize; 13] = [8, 8, 10, 16, 7, 14, 6, 5, 2, 40, 4, 2, 1];
pub const CENSUS_FEATURES: u32 = 123;

pub const DIGITS_SIDE: usize = 28;
pub const DIGITS_CLASSES: u32 = 10;

/// Binary-labelled sparse text: one active feature per one-hot group, with
/// the label drawn from a logistic model over hidden group weights.
pub fn census_text(n: usize, seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let weights: Vec<Vec<f64>> = CENSUS_GROUPS
        .iter()
        .map(|&width| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut instances = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut feats = Vec::with_capacity(CENSUS_GROUPS.len());
        let mut score = 0.0;
        let mut base = 0u32;
        for (g, &width) in CENSUS_GROUPS.iter().enumerate() {
            let choice = rng.gen_range(0..width);
            score += weights[g][choice];
            // Width-one groups act as plain binary flags.
            if width > 1 || rng.gen_bool(0.5) {
                feats.push((base + choice as u32, 1.0));
            }
            base += width as u32;
        }
        let p = 1.0 / (1.0 + (-3.0 * score).exp());
        labels.push(u32::from(rng.gen_bool(p)));
        instances.push(Instance::new(feats));
    }
    libsvm::render(
        &SparseRows {
            instances,
            labels,
            n_features: CENSUS_FEATURES,
        },
        true,
    )
}

/// Census-style corpus loaded through the sparse-text parser.
pub fn census_dataset(n: usize, seed: u64, codec: &FixedPointCodec) -> Result<Dataset, DataError> {
    let rows = libsvm::parse(&census_text(n, seed))?;
    Dataset::new(rows.instances, rows.labels, CENSUS_FEATURES, 2, codec)
}

/// Ten-class images: each class lights an 8x8 block at a class-specific
/// position over sparse background noise. Returned as IDX byte archives.
pub fn digits_idx(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..DIGITS_CLASSES);
        let (block_r, block_c) = (2 + 9 * (class as usize / 4), 2 + 6 * (class as usize % 4));
        let mut img = vec![0.0f64; DIGITS_SIDE * DIGITS_SIDE];
        for (i, px) in img.iter_mut().enumerate() {
            let (r, c) = (i / DIGITS_SIDE, i % DIGITS_SIDE);
            let in_block =
                (block_r..block_r + 8).contains(&r) && (block_c..block_c + 8).contains(&c);
            if in_block && rng.gen_bool(0.9) {
                *px = rng.gen_range(160..=255) as f64 / 255.0;
            } else if !in_block && rng.gen_bool(0.05) {
                *px = rng.gen_range(64..=192) as f64 / 255.0;
            }
        }
        pixels.push(img);
        labels.push(class);
    }
    let images = Images {
        count: n,
        rows: DIGITS_SIDE,
        cols: DIGITS_SIDE,
        pixels,
    };
    (idx::write_images(&images), idx::write_labels(&labels))
}

/// Digits-style corpus loaded through the IDX parser.
pub fn digits_dataset(n: usize, seed: u64, codec: &FixedPointCodec) -> Result<Dataset, DataError> {
    let (img_bytes, label_bytes) = digits_idx(n, seed);
    let images = idx::parse_images(&img_bytes)?;
    let labels = idx::parse_labels(&label_bytes)?;
    Dataset::new(
        idx::to_instances(&images),
        labels,
        (DIGITS_SIDE * DIGITS_SIDE) as u32,
        DIGITS_CLASSES,
        codec,
    )
}

/// Dense Gaussian blobs, one center per class: a small, fully controllable
/// corpus for protocol tests.
pub fn blobs(
    n: usize,
    n_features: u32,
    n_classes: u32,
    seed: u64,
    codec: &FixedPointCodec,
) -> Result<Dataset, DataError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_features).map(|_| rng.gen_range(0.1..0.9)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.08).expect("valid deviation");

    let mut instances = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % n_classes as usize) as u32;
        let feats = (0..n_features)
            .map(|f| {
                let v: f64 = centers[class as usize][f as usize] + noise.sample(&mut rng);
                (f, v.clamp(0.0, 1.0))
            })
            .collect();
        instances.push(Instance::new(feats));
        labels.push(class);
    }
    Dataset::new(instances, labels, n_features, n_classes, codec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::with_defaults(Field::default())
    }

    #[test]
    fn census_corpus_is_sparse_binary_and_seed_stable() {
        let ds = census_dataset(200, 42, &codec()).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.n_features, 123);
        for inst in &ds.instances {
            assert!(inst.features.len() <= CENSUS_GROUPS.len());
            assert!(inst.features.iter().all(|&(f, v)| f < 123 && v == 1.0));
        }
        let ones = ds.labels.iter().filter(|&&y| y == 1).count();
        assert!((20..=180).contains(&ones), "both classes present: {ones}");
        assert_eq!(ds, census_dataset(200, 42, &codec()).unwrap());
        assert_ne!(ds, census_dataset(200, 43, &codec()).unwrap());
    }

    #[test]
    fn digits_corpus_loads_through_idx_with_all_classes() {
        let ds = digits_dataset(120, 7, &codec()).unwrap();
        assert_eq!(ds.len(), 120);
        assert_eq!(ds.n_features, 784);
        let mut seen = [false; 10];
        for &y in &ds.labels {
            seen[y as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "every class appears");
        let avg_active: f64 = ds
            .instances
            .iter()
            .map(|i| i.features.len() as f64)
            .sum::<f64>()
            / 120.0;
        assert!(avg_active < 200.0, "images stay sparse: {avg_active}");
    }

    #[test]
    fn blobs_cycle_classes_and_respect_bounds() {
        let ds = blobs(30, 4, 3, 5, &codec()).unwrap();
        assert_eq!(ds.labels[..6], [0, 1, 2, 0, 1, 2]);
        for inst in &ds.instances {
            for &(_, v) in &inst.features {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
