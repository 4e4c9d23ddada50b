//! Reader and writer for the big-endian IDX ubyte format used by MNIST.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Image, IMAGE_PIXELS, IMAGE_SIDE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { what, expected: offset + 4, actual: bytes.len() })
}

/// Parses an IDX3 image payload into raw byte records of `rows * cols` pixels.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>), DataError> {
    let magic = read_u32(bytes, 0, "image header")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic { what: "images", expected: IMAGE_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4, "image header")? as usize;
    let rows = read_u32(bytes, 8, "image header")? as usize;
    let cols = read_u32(bytes, 12, "image header")? as usize;
    let stride = rows * cols;
    let expected = 16 + count * stride;
    if bytes.len() < expected {
        return Err(DataError::Truncated { what: "image payload", expected, actual: bytes.len() });
    }
    let records = bytes[16..expected].chunks_exact(stride).map(<[u8]>::to_vec).collect();
    Ok((rows, cols, records))
}

/// Parses an IDX1 label payload.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32(bytes, 0, "label header")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic { what: "labels", expected: LABEL_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4, "label header")? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated { what: "label payload", expected, actual: bytes.len() });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DataError::BadLabel(bad));
    }
    Ok(labels)
}

/// Combines parsed image and label payloads into [`Image`]s with pixels scaled by 1/255.
pub fn decode(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Vec<Image>, DataError> {
    let (rows, cols, records) = parse_images(image_bytes)?;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DataError::BadDimensions { rows, cols });
    }
    let labels = parse_labels(label_bytes)?;
    if labels.len() != records.len() {
        return Err(DataError::CountMismatch { images: records.len(), labels: labels.len() });
    }
    Ok(records
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (raw, label))| Image {
            index,
            pixels: raw.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label,
        })
        .collect())
}

/// Loads an MNIST-style pair of IDX files.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Image>, DataError> {
    let read = |p: &Path| fs::read(p).map_err(|source| DataError::Io { path: p.display().to_string(), source });
    decode(&read(images_path)?, &read(labels_path)?)
}

/// Encodes raw 28x28 byte images into an IDX3 payload.
pub fn encode_images(records: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + records.len() * IMAGE_PIXELS);
    for word in [IMAGE_MAGIC, records.len() as u32, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for r in records {
        assert_eq!(r.len(), IMAGE_PIXELS, "IDX image records must be 28x28");
        out.extend_from_slice(r);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an IDX image/label pair to disk.
pub fn write_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    records: &[Vec<u8>],
    labels: &[u8],
) -> Result<(), DataError> {
    let write = |p: &Path, bytes: &[u8]| {
        fs::File::create(p)
            .and_then(|mut f| f.write_all(bytes))
            .map_err(|source| DataError::Io { path: p.display().to_string(), source })
    };
    write(images_path, &encode_images(records))?;
    write(labels_path, &encode_labels(labels))
}
