//! IDX binary files: big-endian header, then unsigned bytes.

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels scaled to `[0, 1]`.
    pub images: Vec<Vector>,
}

fn header(bytes: &[u8], words: usize, magic: u32, what: &str) -> Result<Vec<usize>> {
    let needed = 4 * words;
    if bytes.len() < needed {
        return Err(Error::Truncation {
            needed,
            found: bytes.len(),
        });
    }
    let word = |n: usize| u32::from_be_bytes(bytes[4 * n..4 * n + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(Error::Format(format!(
            "{what}: magic 0x{:08x}, expected 0x{magic:08x}",
            word(0)
        )));
    }
    Ok((1..words).map(|n| word(n) as usize).collect())
}

fn body<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let needed = offset
        .checked_add(len)
        .ok_or_else(|| Error::Format(format!("{what}: header sizes overflow")))?;
    if bytes.len() < needed {
        return Err(Error::Truncation {
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!(
            "{what}: {} trailing bytes after the declared data",
            bytes.len() - needed
        )));
    }
    Ok(&bytes[offset..])
}

/// Parse an image file; pixel byte `v` becomes `v / 255`.
pub fn load_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let dims = header(bytes, 4, IMAGE_MAGIC, "idx images")?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let plane = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("idx images: header sizes overflow".into()))?;
    let total = n
        .checked_mul(plane)
        .ok_or_else(|| Error::Format("idx images: header sizes overflow".into()))?;
    let data = body(bytes, 16, total, "idx images")?;
    let images = if plane == 0 {
        vec![Vector::zeros(0); n]
    } else {
        data.chunks_exact(plane)
            .map(|img| img.iter().map(|&v| f64::from(v) / 255.0).collect())
            .collect()
    };
    Ok(IdxImages { rows, cols, images })
}

/// Parse a label file; every label must be a digit class.
pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let dims = header(bytes, 2, LABEL_MAGIC, "idx labels")?;
    let data = body(bytes, 8, dims[0], "idx labels")?;
    data.iter()
        .map(|&v| {
            let label = usize::from(v);
            if label >= MNIST_CLASSES {
                Err(Error::Label {
                    label,
                    classes: MNIST_CLASSES,
                })
            } else {
                Ok(label)
            }
        })
        .collect()
}

/// Encode raw pixel bytes as an image file.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for w in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
