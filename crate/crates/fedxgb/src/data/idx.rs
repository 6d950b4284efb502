//! Binary IDX reader for image and label archives.
//!
//! Images use magic 0x00000803 (unsigned bytes, three dimensions) and are
//! scaled to [0, 1]; labels use magic 0x00000801. All integers are
//! big-endian.

use super::DataError;
use crate::gbt::Instance;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixel intensities in [0, 1].
    pub pixels: Vec<Vec<f64>>,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    let chunk: [u8; 4] = bytes
        .get(at..at + 4)
        .ok_or_else(|| DataError::Truncated(what.to_string()))?
        .try_into()
        .expect("slice of length four");
    Ok(u32::from_be_bytes(chunk))
}

pub fn parse_images(bytes: &[u8]) -> Result<Images, DataError> {
    let magic = read_u32(bytes, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let need = count * rows * cols;
    let body = bytes
        .get(16..16 + need)
        .ok_or_else(|| DataError::Truncated(format!("expected {need} pixel bytes")))?;
    let pixels = body
        .chunks_exact(rows * cols)
        .map(|img| img.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok(Images {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u32>, DataError> {
    let magic = read_u32(bytes, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let body = bytes
        .get(8..8 + count)
        .ok_or_else(|| DataError::Truncated(format!("expected {count} label bytes")))?;
    Ok(body.iter().map(|&b| b as u32).collect())
}

/// Convert dense images to sparse instances, dropping zero pixels.
pub fn to_instances(images: &Images) -> Vec<Instance> {
    images
        .pixels
        .iter()
        .map(|img| {
            Instance::new(
                img.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (i as u32, v))
                    .collect(),
            )
        })
        .collect()
}

/// Serialize images into IDX bytes (used by the synthetic corpus).
pub fn write_images(images: &Images) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.count * images.rows * images.cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    for img in &images.pixels {
        out.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
    }
    out
}

pub fn write_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}
