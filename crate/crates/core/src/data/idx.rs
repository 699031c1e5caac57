//! IDX files (the MNIST container): big-endian magic, big-endian `u32`
//! dimension sizes, then raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Result, SscError};
use crate::numerics::Matrix;

/// Unsigned-byte data with three dimensions (count, rows, cols).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte data with one dimension (count).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Header {
    dims: Vec<usize>,
    offset: usize,
}

fn read_header(bytes: &[u8], expected: u32, what: &str) -> Result<Header> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| {
                SscError::TruncatedFile(format!("{what}: header ends at byte {}", bytes.len()))
            })
    };
    let magic = word(0)?;
    if magic != expected {
        return Err(SscError::BadMagic {
            expected,
            found: magic,
        });
    }
    let n_dims = (expected & 0xff) as usize;
    let dims = (0..n_dims)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(Header {
        dims,
        offset: 4 + 4 * n_dims,
    })
}

fn body<'a>(bytes: &'a [u8], header: &Header, what: &str) -> Result<&'a [u8]> {
    let len: usize = header.dims.iter().product();
    let end = header.offset + len;
    if bytes.len() < end {
        return Err(SscError::TruncatedFile(format!(
            "{what}: expected {len} data bytes, found {}",
            bytes.len().saturating_sub(header.offset)
        )));
    }
    Ok(&bytes[header.offset..end])
}

/// Parses an image file into `count x (rows·cols)` features scaled by 1/255.
pub fn read_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let header = read_header(bytes, IDX_IMAGES_MAGIC, "images")?;
    let data = body(bytes, &header, "images")?;
    let (n, width) = (header.dims[0], header.dims[1] * header.dims[2]);
    Matrix::new(
        n,
        width,
        data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let header = read_header(bytes, IDX_LABELS_MAGIC, "labels")?;
    Ok(body(bytes, &header, "labels")?
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| SscError::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| SscError::io(labels_path, e))?;
    let features = read_idx_images(&images)?;
    let labels = read_idx_labels(&labels)?;
    if features.rows() != labels.len() {
        return Err(SscError::CountMismatch(format!(
            "{} images but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(features, labels, k, name)
}

/// Writes `features` (values in [0, 1], quantised to bytes) as an
/// `rows x cols` image file and `labels` as a label file.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    features: &Matrix,
    labels: &[usize],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != features.cols() {
        return Err(SscError::DimensionMismatch(format!(
            "{rows}x{cols} images cannot hold {} features",
            features.cols()
        )));
    }
    let mut img = Vec::with_capacity(16 + features.data().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [features.rows(), rows, cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(
        features
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let byte = u8::try_from(l).map_err(|_| SscError::LabelOutOfRange { label: l, k: 256 })?;
        lab.push(byte);
    }
    fs::write(images_path, img).map_err(|e| SscError::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| SscError::io(labels_path, e))?;
    Ok(())
}
