//! Dense row-major matrices, stable reductions and seeded random streams.
//!
//! Everything here works in `f64`. Loops are written in plain row-major
//! order so that summation order, and therefore every result, is fixed.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SscError};

/// Rows with an L2 norm at or below this are rejected by [`row_normalize`].
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SscError::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(SscError::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Matrix with i.i.d. standard normal entries multiplied by `scale`.
    pub fn random_normal(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield nothing
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks matrices vertically. All parts must share the column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = match parts.iter().find(|m| m.rows > 0) {
            Some(m) => m.cols,
            None => parts.first().map_or(0, |m| m.cols),
        };
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.rows == 0 {
                continue;
            }
            if m.cols != cols {
                return Err(SscError::DimensionMismatch(format!(
                    "cannot stack {} columns onto {cols}",
                    m.cols
                )));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(SscError::DimensionMismatch(format!(
                "row dot products need equal widths, got {} and {}",
                self.cols, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self · selfᵀ`, computing each symmetric pair once.
    pub fn gram(&self) -> Matrix {
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                out.data[i * n + j] = v;
                out.data[j * n + i] = v;
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(SscError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += aik * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`; both operands must have the same row count.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(SscError::DimensionMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Matrix, factor: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SscError::DimensionMismatch(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Largest absolute entry-wise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.row_iter().map(l2_norm).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent partial sums so the loop is not bound by add latency
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales every row to unit L2 norm.
pub fn row_normalize(m: &Matrix) -> Result<Matrix> {
    row_normalize_with_norms(m).map(|(out, _)| out)
}

/// Like [`row_normalize`] but also returns the original row norms.
pub fn row_normalize_with_norms(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let norm = l2_norm(row);
        if norm.is_nan() || norm <= MIN_ROW_NORM {
            return Err(SscError::ZeroNormRow(i));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// `log Σ exp(v)` computed with the maximum factored out. Returns `-inf` for
/// an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `v / temperature - logsumexp(v / temperature)`.
pub fn log_softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let scaled: Vec<f64> = v.iter().map(|x| x / temperature).collect();
    let lse = logsumexp(&scaled);
    Ok(scaled.into_iter().map(|x| x - lse).collect())
}

/// Softmax with temperature via [`log_softmax`].
pub fn softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    Ok(log_softmax(v, temperature)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(SscError::NonPositiveTemperature(temperature))
    }
}

/// Cosine similarities `a_i · b_j` for unit-norm rows. Entries are not clipped.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul_transposed(b)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Deterministic random stream (ChaCha8) with labelled child streams.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived only from this stream's seed and `label`,
    /// never from how many values have been drawn so far.
    pub fn child(&self, label: &str) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Child stream keyed by an integer, e.g. a step or run index.
    pub fn child_indexed(&self, label: &str, index: u64) -> SeededRng {
        SeededRng::new(splitmix64(
            self.seed ^ fnv1a(label.as_bytes()) ^ splitmix64(index.wrapping_add(1)),
        ))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw from `[low, high)`; returns `low` when the range is empty.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        if high <= low {
            return low;
        }
        self.inner.random_range(low..high)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Random unit vector of length `dim`.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = l2_norm(&v);
            if n > 1e-6 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four_five() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = row_normalize(&m).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_axis_vectors() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let n = row_normalize(&m).unwrap();
        assert_eq!(n.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(row_normalize(&m), Err(SscError::ZeroNormRow(1))));
        let m = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(row_normalize(&m), Err(SscError::ZeroNormRow(0))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = SeededRng::new(3);
        let m = Matrix::random_normal(20, 7, 1.0, &mut rng);
        let once = row_normalize(&m).unwrap();
        let twice = row_normalize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 2.0 * f64::EPSILON);
        }
        for n in once.row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_symmetric_pair() {
        let out = log_softmax(&[0.0, 0.0], 1.0).unwrap();
        assert!((out[0] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((out[1] + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_one_zero() {
        let out = log_softmax(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((out[0].exp() - e / (e + 1.0)).abs() < 1e-12);
        assert!((out[1].exp() - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((out[0].exp() - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_large_logit_stays_finite() {
        let out = log_softmax(&[1000.0, 0.0], 1.0).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0].exp() - 1.0).abs() < 1e-12);
        assert!(out[1].exp() < 1e-300);
    }

    #[test]
    fn log_softmax_rejects_bad_temperature() {
        for t in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                log_softmax(&[1.0], t),
                Err(SscError::NonPositiveTemperature(_))
            ));
        }
    }

    #[test]
    fn log_softmax_shift_invariance() {
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let v: Vec<f64> = (0..6).map(|_| rng.normal() * 3.0).collect();
            let c = rng.uniform(-100.0, 100.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for t in [0.04, 1.0] {
                let a = log_softmax(&v, t).unwrap();
                let b = log_softmax(&shifted, t).unwrap();
                let sum: f64 = a.iter().map(|x| x.exp()).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-10, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn similarity_examples() {
        let eye = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(similarity_matrix(&eye, &eye).unwrap(), eye);
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[-1.0, 0.0]]).unwrap();
        assert_eq!(similarity_matrix(&a, &b).unwrap().data(), &[-1.0]);
        let c = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_matrix(&a, &c),
            Err(SscError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn similarity_matches_naive_loop() {
        let mut rng = SeededRng::new(5);
        let a = row_normalize(&Matrix::random_normal(9, 5, 1.0, &mut rng)).unwrap();
        let b = row_normalize(&Matrix::random_normal(4, 5, 1.0, &mut rng)).unwrap();
        let s = similarity_matrix(&a, &b).unwrap();
        for i in 0..9 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(j, k);
                }
                assert!((s.get(i, j) - acc).abs() < 1e-12);
                assert!(s.get(i, j).abs() <= 1.0 + 1e-9);
            }
        }
        let self_sim = similarity_matrix(&a, &a).unwrap();
        for i in 0..9 {
            assert!((self_sim.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = SeededRng::new(8);
        let a = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let b = Matrix::random_normal(4, 5, 1.0, &mut rng);
        let ab = a.matmul(&b).unwrap();
        let ab2 = a.matmul_transposed(&b.transpose()).unwrap();
        let ab3 = a.transpose().transpose_matmul(&b).unwrap();
        assert!(ab.max_abs_diff(&ab2) < 1e-12);
        assert!(ab.max_abs_diff(&ab3) < 1e-12);
    }

    #[test]
    fn vstack_and_select() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        let s = Matrix::vstack(&[&a, &Matrix::zeros(0, 0), &b]).unwrap();
        assert_eq!(s.shape(), (3, 2));
        assert_eq!(s.select_rows(&[2, 0]).data(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(s.slice_rows(1, 3), b);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn rng_reproducible_and_children_independent_of_draws() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let mut ba = [0u8; 64];
        let mut bb = [0u8; 64];
        a.fill_bytes(&mut ba);
        b.fill_bytes(&mut bb);
        assert_eq!(ba, bb);

        let fresh = SeededRng::new(42);
        let mut c1 = fresh.child("augment");
        let mut c2 = a.child("augment");
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_ne!(
            fresh.child("augment").next_u64(),
            fresh.child("loader").next_u64()
        );
        assert_ne!(
            fresh.child_indexed("step", 0).next_u64(),
            fresh.child_indexed("step", 1).next_u64()
        );
    }
}
