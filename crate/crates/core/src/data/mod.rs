//! Datasets, semi-supervised splits and vector-space augmentations.

mod augment;
mod idx;

use std::path::Path;

pub use augment::{augment_strong, augment_weak, AugmentConfig};
pub use idx::{
    load_idx, read_idx_images, read_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};

use crate::error::{Result, SscError};
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub k: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        k: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(SscError::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(SscError::LabelOutOfRange { label, k });
        }
        if labels.len() < k {
            return Err(SscError::InvalidDataset(format!(
                "{} examples cannot cover {k} classes",
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            k,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Isotropic Gaussian clusters around random unit-direction means.
/// Rows are ordered class by class.
pub fn gen_gaussian_blobs(
    k: usize,
    input_dim: usize,
    n_per_class: usize,
    spread: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if k < 2 || input_dim < 2 {
        return Err(SscError::InvalidDataset(format!(
            "blobs need k >= 2 and input_dim >= 2, got k={k}, input_dim={input_dim}"
        )));
    }
    let means = blob_means(k, input_dim, rng);
    sample_blobs(&means, n_per_class, spread, rng)
}

/// `k` random unit vectors, the cluster centres used by [`gen_gaussian_blobs`].
pub fn blob_means(k: usize, input_dim: usize, rng: &mut SeededRng) -> Matrix {
    let mut means = Matrix::zeros(k, input_dim);
    for c in 0..k {
        let v = rng.unit_vector(input_dim);
        means.row_mut(c).copy_from_slice(&v);
    }
    means
}

/// Draws `n_per_class` points with standard deviation `spread` around each mean row.
pub fn sample_blobs(
    means: &Matrix,
    n_per_class: usize,
    spread: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let (k, input_dim) = means.shape();
    let mut features = Matrix::zeros(k * n_per_class, input_dim);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for c in 0..k {
        let mean = means.row(c);
        for s in 0..n_per_class {
            let row = features.row_mut(c * n_per_class + s);
            for (v, m) in row.iter_mut().zip(mean) {
                *v = m + spread * rng.normal();
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, k, format!("blobs-k{k}-d{input_dim}"))
}

/// Class means of a blobs dataset, recomputed from its samples.
pub fn class_means(d: &Dataset) -> Matrix {
    let mut sums = Matrix::zeros(d.k, d.input_dim());
    let counts = d.class_counts();
    for (row, &l) in d.features.row_iter().zip(&d.labels) {
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Two interleaved half circles: class 0 on the unit circle's upper half,
/// class 1 on the lower half of the unit circle centred at (1, 0.5).
pub fn gen_two_moons(n: usize, noise: f64, rng: &mut SeededRng) -> Result<Dataset> {
    if !n.is_multiple_of(2) || n == 0 {
        return Err(SscError::InvalidDataset(format!(
            "two moons needs a positive even sample count, got {n}"
        )));
    }
    let half = n / 2;
    let mut features = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    let step = if half > 1 {
        std::f64::consts::PI / (half - 1) as f64
    } else {
        0.0
    };
    for i in 0..half {
        let t = step * i as f64;
        features.row_mut(i).copy_from_slice(&[t.cos(), t.sin()]);
        features
            .row_mut(half + i)
            .copy_from_slice(&[1.0 - t.cos(), 0.5 - t.sin()]);
    }
    labels.extend(std::iter::repeat_n(0, half));
    labels.extend(std::iter::repeat_n(1, half));
    if noise > 0.0 {
        features
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += noise * rng.normal());
    }
    Dataset::new(features, labels, 2, "two-moons")
}

/// Reads a CSV file whose last column is an integer class label.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() < 2 {
            return Err(SscError::InvalidDataset(format!(
                "{}: record {line} needs at least one feature and a label",
                path.display()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                SscError::InvalidDataset(format!(
                    "{}: record {line}: bad number `{s}`",
                    path.display()
                ))
            })
        };
        let features = record
            .iter()
            .take(record.len() - 1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let raw = record[record.len() - 1].trim();
        let label = raw.parse::<usize>().map_err(|_| {
            SscError::InvalidDataset(format!(
                "{}: record {line}: bad label `{raw}`",
                path.display()
            ))
        })?;
        rows.push(features);
        labels.push(label);
    }
    let features = Matrix::from_rows(&rows)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(features, labels, k, name)
}

fn csv_error(path: &Path, e: csv::Error) -> SscError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SscError::io(path, io),
        other => SscError::InvalidDataset(format!("{}: {other:?}", path.display())),
    }
}

/// Labeled, unlabeled and validation partitions of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSplit {
    pub labeled_x: Matrix,
    pub labeled_y: Vec<usize>,
    pub unlabeled: Matrix,
    /// Ground truth of the unlabeled pool; only used for diagnostics.
    pub unlabeled_y: Vec<usize>,
    pub val_x: Matrix,
    pub val_y: Vec<usize>,
    pub k: usize,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl SemiSplit {
    pub fn input_dim(&self) -> usize {
        self.labeled_x.cols()
    }
}

/// Draws exactly `labels_per_class` labeled examples per class, then splits
/// the remaining pool into validation (`val_fraction`, rounded) and unlabeled.
pub fn split_semi(
    d: &Dataset,
    labels_per_class: usize,
    val_fraction: f64,
    rng: &mut SeededRng,
) -> Result<SemiSplit> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(SscError::Config(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.k];
    for (i, &l) in d.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut labeled_idx = Vec::with_capacity(labels_per_class * d.k);
    let mut pool = Vec::with_capacity(d.len());
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < labels_per_class + 1 {
            return Err(SscError::InsufficientClassCount {
                class,
                available: members.len(),
                required: labels_per_class + 1,
            });
        }
        rng.shuffle(members);
        labeled_idx.extend_from_slice(&members[..labels_per_class]);
        pool.extend_from_slice(&members[labels_per_class..]);
    }
    rng.shuffle(&mut pool);
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let val_idx = pool[..n_val].to_vec();
    let unlabeled_idx = pool[n_val..].to_vec();
    let pick = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| d.labels[i]).collect() };
    Ok(SemiSplit {
        labeled_x: d.features.select_rows(&labeled_idx),
        labeled_y: pick(&labeled_idx),
        unlabeled: d.features.select_rows(&unlabeled_idx),
        unlabeled_y: pick(&unlabeled_idx),
        val_x: d.features.select_rows(&val_idx),
        val_y: pick(&val_idx),
        k: d.k,
        labeled_idx,
        unlabeled_idx,
        val_idx,
    })
}
