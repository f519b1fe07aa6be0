use std::path::Path;

use crate::error::{Error, Result};

/// Magic number of an unsigned-byte, 3-dimensional IDX file (images).
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// Greyscale images scaled to `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, "truncated idx header"))
}

pub fn idx_parse(bytes: &[u8]) -> Result<ImageSet> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(
            0,
            format!("idx magic {magic:#010x} is not an image file ({IDX_IMAGE_MAGIC:#010x})"),
        ));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(Error::format(
            bytes.len() as u64,
            format!("idx payload truncated: {count} images of {rows}x{cols} need {needed} bytes"),
        ));
    }
    let images = bytes[16..needed]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|chunk| chunk.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok(ImageSet { rows, cols, images })
}

pub fn idx_load(path: &Path) -> Result<ImageSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    idx_parse(&bytes)
}
