//! Prototype probability head and pseudo-label assignment.
//!
//! Class probabilities for a weak view are a temperature softmax over its
//! cosine similarities with the prototypes. Confident examples (max
//! probability strictly above `tau`) take their argmax class. The rest get
//! the label `k + i`, which is unique per example and disjoint from every
//! class. Both strong views of an example share its label, so an
//! unconfident example's only positive is its sibling view.

use crate::error::{Result, SscError};
use crate::numerics::{argmax, check_temperature, log_softmax, similarity_matrix, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelResult {
    /// Labels of the two stacked strong views (length `2·μB`).
    pub labels: Vec<usize>,
    /// `max p > tau` per unlabeled example (length `μB`).
    pub confident: Vec<bool>,
    /// `μB x K` row-stochastic class probabilities.
    pub probabilities: Matrix,
    /// Argmax class per example, confident or not.
    pub hard_labels: Vec<usize>,
}

impl PseudoLabelResult {
    pub fn confident_count(&self) -> usize {
        self.confident.iter().filter(|&&c| c).count()
    }

    pub fn confident_fraction(&self) -> f64 {
        if self.confident.is_empty() {
            0.0
        } else {
            self.confident_count() as f64 / self.confident.len() as f64
        }
    }
}

/// `softmax(prototypes · z_i / t_prime)` for every row of `z_w`.
pub fn prototype_probabilities(z_w: &Matrix, prototypes: &Matrix, t_prime: f64) -> Result<Matrix> {
    check_temperature(t_prime)?;
    if z_w.cols() != prototypes.cols() {
        return Err(SscError::DimensionMismatch(format!(
            "weak embeddings have width {}, prototypes {}",
            z_w.cols(),
            prototypes.cols()
        )));
    }
    let mut probs = similarity_matrix(z_w, prototypes)?;
    for i in 0..probs.rows() {
        let row = probs.row_mut(i);
        let logp = log_softmax(row, t_prime)?;
        for (dst, lp) in row.iter_mut().zip(logp) {
            *dst = lp.exp();
        }
    }
    Ok(probs)
}

pub fn assign_pseudo_labels(
    z_w: &Matrix,
    prototypes: &Matrix,
    tau: f64,
    t_prime: f64,
    k: usize,
) -> Result<PseudoLabelResult> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SscError::TauOutOfRange(tau));
    }
    if prototypes.rows() != k {
        return Err(SscError::DimensionMismatch(format!(
            "{} prototypes for {k} classes",
            prototypes.rows()
        )));
    }
    let probabilities = prototype_probabilities(z_w, prototypes, t_prime)?;
    let mu_b = z_w.rows();
    let mut hard_labels = Vec::with_capacity(mu_b);
    let mut confident = Vec::with_capacity(mu_b);
    let mut labels = vec![0; 2 * mu_b];
    for i in 0..mu_b {
        let row = probabilities.row(i);
        let q = argmax(row);
        let sure = row[q] > tau;
        let label = if sure { q } else { k + i };
        labels[i] = label;
        labels[i + mu_b] = label;
        hard_labels.push(q);
        confident.push(sure);
    }
    Ok(PseudoLabelResult {
        labels,
        confident,
        probabilities,
        hard_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn basis(k: usize) -> Matrix {
        let mut p = Matrix::zeros(k, k);
        for i in 0..k {
            p.set(i, i, 1.0);
        }
        p
    }

    #[test]
    fn probabilities_unit_temperature() {
        let p = prototype_probabilities(&m(&[&[1.0, 0.0]]), &basis(2), 1.0).unwrap();
        assert!((p.get(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn probabilities_equidistant_are_uniform() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = prototype_probabilities(&m(&[&[h, h]]), &basis(2), 0.04).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probabilities_default_head_temperature() {
        let p = prototype_probabilities(&m(&[&[1.0, 0.0]]), &basis(2), 0.04).unwrap();
        // softmax([25, 0]) = [1 / (1 + e^-25), e^-25 / (1 + e^-25)]
        let tail = (-25.0f64).exp() / (1.0 + (-25.0f64).exp());
        assert!((p.get(0, 1) - tail).abs() < 1e-20);
        assert!((p.get(0, 1) - 1.388_794e-11).abs() < 1e-16);
        assert!(p.get(0, 0) > 0.95);
    }

    #[test]
    fn probabilities_errors() {
        let z = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            prototype_probabilities(&z, &basis(2), 0.0),
            Err(SscError::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            prototype_probabilities(&z, &basis(3), 1.0),
            Err(SscError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn confident_example_takes_argmax() {
        let z = m(&[&[0.0, 0.0, 1.0, 0.0]]);
        let r = assign_pseudo_labels(&z, &basis(4), 0.95, 0.04, 4).unwrap();
        assert_eq!(r.labels, vec![2, 2]);
        assert_eq!(r.confident, vec![true]);
        assert_eq!(r.hard_labels, vec![2]);
    }

    #[test]
    fn equidistant_example_is_unconfident() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = assign_pseudo_labels(&m(&[&[h, h]]), &basis(2), 0.95, 0.04, 2).unwrap();
        assert_eq!(r.labels, vec![2, 2]);
        assert_eq!(r.confident, vec![false]);
        assert_eq!(r.hard_labels, vec![0]);
    }

    #[test]
    fn unconfident_labels_are_shifted_and_duplicated() {
        let half = 0.5;
        let z = m(&[&[half; 4], &[half; 4], &[half; 4]]);
        let r = assign_pseudo_labels(&z, &basis(4), 0.95, 0.04, 4).unwrap();
        assert_eq!(r.labels, vec![4, 5, 6, 4, 5, 6]);
        assert_eq!(r.confident_count(), 0);
    }

    #[test]
    fn threshold_is_strict() {
        // p = [0.75, 0.25] exactly at T' = 1 / ln 3
        let t = 1.0 / 3.0f64.ln();
        let z = m(&[&[1.0, 0.0]]);
        let r = assign_pseudo_labels(&z, &basis(2), 0.75, t, 2).unwrap();
        let p = r.probabilities.get(0, 0);
        assert!((p - 0.75).abs() < 1e-15);
        let expected = p > 0.75;
        assert_eq!(r.confident[0], expected);
        let r = assign_pseudo_labels(&z, &basis(2), p, t, 2).unwrap();
        assert!(!r.confident[0]);
    }

    #[test]
    fn tau_and_k_validation() {
        let z = m(&[&[1.0, 0.0]]);
        for tau in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(
                assign_pseudo_labels(&z, &basis(2), tau, 0.04, 2),
                Err(SscError::TauOutOfRange(_))
            ));
        }
        assert!(assign_pseudo_labels(&z, &basis(2), 0.9, 0.04, 3).is_err());
    }
}
