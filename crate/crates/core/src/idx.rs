//! IDX image/label files (the MNIST container format).
//!
//! All integers are big-endian. Images: magic `0x00000803`, then the item
//! count, rows and columns, then `count * rows * cols` unsigned bytes.
//! Labels: magic `0x00000801`, the item count, then one byte per item.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{DataSample, Dataset};
use crate::rng::{self, Purpose};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `count * rows * cols` bytes.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, k: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[k * len..(k + 1) * len]
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| Error::Ingestion(format!("truncated header: missing {what}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::Ingestion(format!(
            "bad magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_be_u32(bytes, 4, "item count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Ingestion("image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Ingestion(format!(
            "truncated image data: need {len} bytes, have {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..len].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_be_u32(bytes, 4, "item count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Ingestion(format!(
            "truncated label data: need {count} bytes, have {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Binary subset of an IDX dataset: `subset_m` images drawn uniformly
/// without replacement from classes `class_a` (label `-1`) and `class_b`
/// (label `+1`), pixels scaled to `[0, 1]`. Selected samples keep their
/// file order.
pub fn load_idx_subset(
    images_path: &Path,
    labels_path: &Path,
    class_a: u8,
    class_b: u8,
    subset_m: usize,
    seed: u64,
) -> Result<Dataset> {
    let images = parse_images(&read_file(images_path)?)?;
    let labels = parse_labels(&read_file(labels_path)?)?;
    binary_subset(&images, &labels, class_a, class_b, subset_m, seed)
}

/// In-memory variant of [`load_idx_subset`].
pub fn binary_subset(
    images: &IdxImages,
    labels: &[u8],
    class_a: u8,
    class_b: u8,
    subset_m: usize,
    seed: u64,
) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Ingestion(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if class_a == class_b {
        return Err(Error::Ingestion("the two classes must differ".into()));
    }
    for class in [class_a, class_b] {
        if !labels.contains(&class) {
            return Err(Error::Ingestion(format!("class {class} does not occur")));
        }
    }
    let mut pool: Vec<usize> = (0..labels.len())
        .filter(|&k| labels[k] == class_a || labels[k] == class_b)
        .collect();
    if subset_m == 0 || subset_m > pool.len() {
        return Err(Error::Ingestion(format!(
            "subset_m = {subset_m} but only {} samples belong to classes {class_a} and {class_b}",
            pool.len()
        )));
    }

    let mut stream = rng::stream(seed, Purpose::Subset, 0, 0);
    for slot in 0..subset_m {
        let pick = stream.random_range(slot..pool.len());
        pool.swap(slot, pick);
    }
    let mut chosen = pool[..subset_m].to_vec();
    chosen.sort_unstable();

    let samples = chosen
        .into_iter()
        .enumerate()
        .map(|(index, k)| DataSample {
            features: images.image(k).iter().map(|&px| f64::from(px) / 255.0).collect(),
            label: if labels[k] == class_a { -1.0 } else { 1.0 },
            index,
        })
        .collect();
    Dataset::new(samples)
}

/// Serialize images in IDX form (used to build fixtures).
pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

/// Serialize labels in IDX form.
pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(count: usize) -> (IdxImages, Vec<u8>) {
        let (rows, cols) = (3, 2);
        let pixels = (0..count * rows * cols).map(|k| (k * 37 % 256) as u8).collect();
        let labels = (0..count).map(|k| (k % 4) as u8).collect();
        (IdxImages { count, rows, cols, pixels }, labels)
    }

    #[test]
    fn parse_round_trip() {
        let (img, lab) = fixture(10);
        assert_eq!(parse_images(&encode_images(&img)).unwrap(), img);
        assert_eq!(parse_labels(&encode_labels(&lab)).unwrap(), lab);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let (img, lab) = fixture(4);
        assert!(matches!(parse_images(&encode_labels(&lab)), Err(Error::Ingestion(_))));
        assert!(parse_labels(&encode_images(&img)).is_err());
        let mut bytes = encode_images(&img);
        bytes[3] = 0x02;
        assert!(parse_images(&bytes).is_err());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let (img, lab) = fixture(4);
        let bytes = encode_images(&img);
        assert!(parse_images(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_images(&bytes[..10]).is_err());
        let bytes = encode_labels(&lab);
        assert!(parse_labels(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn subset_labels_and_scaling() {
        let (img, lab) = fixture(40);
        let ds = binary_subset(&img, &lab, 0, 2, 12, 5).unwrap();
        assert_eq!(ds.m(), 12);
        assert_eq!(ds.feature_len(), 6);
        for s in ds.samples() {
            assert!(s.label == -1.0 || s.label == 1.0);
            assert!(s.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_eq!(ds, binary_subset(&img, &lab, 0, 2, 12, 5).unwrap());
        assert_ne!(ds, binary_subset(&img, &lab, 0, 2, 12, 6).unwrap());
    }

    #[test]
    fn subset_errors() {
        let (img, lab) = fixture(40);
        assert!(binary_subset(&img, &lab, 0, 7, 5, 0).is_err());
        assert!(binary_subset(&img, &lab, 0, 2, 21, 0).is_err());
        assert!(binary_subset(&img, &lab, 0, 2, 20, 0).is_ok());
        assert!(binary_subset(&img, &lab[..39], 0, 2, 5, 0).is_err());
    }
}
