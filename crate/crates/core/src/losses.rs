//! Contrastive and cross-entropy losses with analytic gradients.
//!
//! Every contrastive loss here is one routine: the anchor-weighted
//! supervised contrastive loss over a stacked batch. Plain SupCon, the
//! self-supervised InfoNCE form and the semi-supervised SSC loss only differ
//! in the labels, weights and anchor mask they feed it.
//!
//! Conventions shared by all of them:
//! * the positive set of anchor `i` is every other row with the same label;
//! * anchors with no positive are skipped, both in the sum and in the
//!   weight normaliser, but still serve as negatives for other anchors;
//! * the denominator runs over every row except the anchor, positives
//!   included;
//! * gradients are unconstrained, i.e. taken before any re-projection onto
//!   the unit sphere.

use std::collections::HashMap;

use crate::error::{Result, SscError};
use crate::numerics::{check_temperature, l2_norm, logsumexp, Matrix};

/// Tolerance for the unit-norm precondition on embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Embeddings with their labels, anchor weights and anchor mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub z: Matrix,
    pub y: Vec<usize>,
    pub lambda: Vec<f64>,
    pub anchor_mask: Vec<bool>,
}

impl ContrastiveBatch {
    pub fn new(z: Matrix, y: Vec<usize>, lambda: Vec<f64>, anchor_mask: Vec<bool>) -> Result<Self> {
        check_unit_rows(&z)?;
        Self::new_unnormalized(z, y, lambda, anchor_mask)
    }

    /// Every row is an anchor with weight one.
    pub fn unweighted(z: Matrix, y: Vec<usize>) -> Result<Self> {
        let n = z.rows();
        Self::new(z, y, vec![1.0; n], vec![true; n])
    }

    /// Same as [`ContrastiveBatch::new`] without the unit-norm check. Used to
    /// probe the loss off the sphere, e.g. by finite differences.
    pub fn new_unnormalized(
        z: Matrix,
        y: Vec<usize>,
        lambda: Vec<f64>,
        anchor_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = z.rows();
        if y.len() != n || lambda.len() != n || anchor_mask.len() != n {
            return Err(SscError::InvalidBatch(format!(
                "{n} embeddings but {} labels, {} weights, {} mask entries",
                y.len(),
                lambda.len(),
                anchor_mask.len()
            )));
        }
        if let Some(i) = lambda.iter().position(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(SscError::InvalidBatch(format!(
                "anchor weight {i} is {} (must be finite and nonnegative)",
                lambda[i]
            )));
        }
        Ok(Self {
            z,
            y,
            lambda,
            anchor_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `|P(i)|` for every row.
    pub fn positive_counts(&self) -> Vec<usize> {
        positive_counts(&self.y)
    }
}

/// Number of other rows sharing each row's label.
pub fn positive_counts(labels: &[usize]) -> Vec<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    labels.iter().map(|l| counts[l] - 1).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of `value` w.r.t. every row of the input embeddings.
    pub grad_z: Matrix,
    /// Unweighted per-anchor term; zero for skipped anchors.
    pub per_anchor: Vec<f64>,
}

/// Weighted semi-supervised contrastive loss over a stacked batch.
pub fn ssc_loss(batch: &ContrastiveBatch, temperature: f64) -> Result<LossOutput> {
    check_temperature(temperature)?;
    let ContrastiveBatch {
        z,
        y,
        lambda,
        anchor_mask,
    } = batch;
    let n = z.rows();
    if n < 2 {
        return Err(SscError::InvalidBatch(format!(
            "need at least two rows, got {n}"
        )));
    }
    let pos = positive_counts(y);
    let anchors: Vec<usize> = (0..n).filter(|&i| anchor_mask[i] && pos[i] > 0).collect();
    let weight_sum: f64 = anchors.iter().map(|&i| lambda[i]).sum();
    if anchors.is_empty() || weight_sum <= 0.0 {
        return Err(SscError::NoValidAnchor);
    }

    let mut sim = z.gram();
    sim.scale_in_place(1.0 / temperature);

    // coeff[i][j] = ∂value/∂sim[i][j] (sim already divided by T)
    let mut coeff = Matrix::zeros(n, n);
    let mut per_anchor = vec![0.0; n];
    let mut weighted = 0.0;
    let mut others = Vec::with_capacity(n - 1);
    for &i in &anchors {
        let row = sim.row(i);
        others.clear();
        others.extend(
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &s)| s),
        );
        let lse = logsumexp(&others);
        let inv_pos = 1.0 / pos[i] as f64;
        let pos_sum: f64 = (0..n)
            .filter(|&j| j != i && y[j] == y[i])
            .map(|j| row[j])
            .sum();
        let term = lse - pos_sum * inv_pos;
        per_anchor[i] = term;
        weighted += lambda[i] * term;

        let w = lambda[i] / weight_sum;
        if w == 0.0 {
            continue;
        }
        let dst = coeff.row_mut(i);
        for j in (0..n).filter(|&j| j != i) {
            let positive = if y[j] == y[i] { inv_pos } else { 0.0 };
            dst[j] = w * ((row[j] - lse).exp() - positive);
        }
    }
    let value = weighted / weight_sum;

    // sim_ij = z_i·z_j / T, so ∂/∂z = (C + Cᵀ) z / T
    let mut sym = coeff.clone();
    let c = coeff.data();
    for (i, row) in sym.data_mut().chunks_exact_mut(n).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += c[j * n + i];
        }
    }
    let mut grad_z = sym.matmul(z)?;
    grad_z.scale_in_place(1.0 / temperature);

    Ok(LossOutput {
        value,
        grad_z,
        per_anchor,
    })
}

/// Supervised contrastive loss: every row is an anchor with unit weight.
pub fn supcon_loss(z: &Matrix, y: &[usize], temperature: f64) -> Result<LossOutput> {
    let batch = ContrastiveBatch::unweighted(z.clone(), y.to_vec())?;
    ssc_loss(&batch, temperature)
}

/// Labels `[0, 1, .., mu_b-1]` repeated twice: each row's only positive is
/// the other view of the same sample.
pub fn sibling_view_labels(mu_b: usize) -> Vec<usize> {
    (0..mu_b).chain(0..mu_b).collect()
}

/// Self-supervised InfoNCE loss on two stacked views of `mu_b` samples.
pub fn self_loss(z_u: &Matrix, mu_b: usize, temperature: f64) -> Result<LossOutput> {
    if z_u.rows() != 2 * mu_b {
        return Err(SscError::OddRowCount {
            expected: 2 * mu_b,
            actual: z_u.rows(),
        });
    }
    supcon_loss(z_u, &sibling_view_labels(mu_b), temperature)
}

/// Cross-entropy of a prototype classifier together with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeCeOutput {
    pub value: f64,
    pub grad_z: Matrix,
    pub grad_prototypes: Matrix,
    pub per_example: Vec<f64>,
}

/// Mean cross-entropy of `softmax(prototypes · z_i)` against `y`, i.e. a
/// bias-free linear classifier whose weights are the prototypes.
pub fn ce_prototype_loss(
    z_x: &Matrix,
    y: &[usize],
    prototypes: &Matrix,
) -> Result<PrototypeCeOutput> {
    let mask = vec![true; y.len()];
    prototype_cross_entropy(z_x, y, &mask, prototypes, 1.0)
}

/// Masked prototype cross-entropy with logits `z · prototypesᵀ / temperature`,
/// averaged over all rows (masked rows contribute zero).
pub fn prototype_cross_entropy(
    z: &Matrix,
    targets: &[usize],
    mask: &[bool],
    prototypes: &Matrix,
    temperature: f64,
) -> Result<PrototypeCeOutput> {
    check_temperature(temperature)?;
    if z.cols() != prototypes.cols() {
        return Err(SscError::DimensionMismatch(format!(
            "embeddings have width {}, prototypes {}",
            z.cols(),
            prototypes.cols()
        )));
    }
    let mut logits = z.matmul_transposed(prototypes)?;
    logits.scale_in_place(1.0 / temperature);
    let ce = masked_cross_entropy(&logits, targets, mask)?;
    let mut g = ce.grad_logits;
    g.scale_in_place(1.0 / temperature);
    let grad_z = g.matmul(prototypes)?;
    let grad_prototypes = g.transpose_matmul(z)?;
    Ok(PrototypeCeOutput {
        value: ce.value,
        grad_z,
        grad_prototypes,
        per_example: ce.per_row,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropyOutput {
    pub value: f64,
    pub grad_logits: Matrix,
    /// Per-row cross-entropy, zero where masked out.
    pub per_row: Vec<f64>,
}

/// `(1/n) Σ_i mask_i · H_i` with its gradient w.r.t. the logits.
pub fn masked_cross_entropy(
    logits: &Matrix,
    targets: &[usize],
    mask: &[bool],
) -> Result<CrossEntropyOutput> {
    let (n, k) = logits.shape();
    if targets.len() != n || mask.len() != n {
        return Err(SscError::DimensionMismatch(format!(
            "{n} logit rows but {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&label) = targets.iter().find(|&&t| t >= k) {
        return Err(SscError::LabelOutOfRange { label, k });
    }
    let mut grad_logits = Matrix::zeros(n, k);
    let mut per_row = vec![0.0; n];
    if n == 0 {
        return Ok(CrossEntropyOutput {
            value: 0.0,
            grad_logits,
            per_row,
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in (0..n).filter(|&i| mask[i]) {
        let row = logits.row(i);
        let lse = logsumexp(row);
        per_row[i] = lse - row[targets[i]];
        total += per_row[i];
        let dst = grad_logits.row_mut(i);
        for (c, d) in dst.iter_mut().enumerate() {
            let hit = if c == targets[i] { 1.0 } else { 0.0 };
            *d = inv_n * ((row[c] - lse).exp() - hit);
        }
    }
    Ok(CrossEntropyOutput {
        value: total * inv_n,
        grad_logits,
        per_row,
    })
}

/// Masked cross-entropy value only.
pub fn cross_entropy_masked(logits: &Matrix, targets: &[usize], mask: &[bool]) -> Result<f64> {
    masked_cross_entropy(logits, targets, mask).map(|o| o.value)
}

/// For each example, the SSC loss of `[z_i; prototypes]` with labels
/// `[y_i; 0..K]` where only the data row acts as anchor; averaged over the
/// examples. At `temperature = 1` this equals [`ce_prototype_loss`].
pub fn anchored_prototype_supcon(
    z_x: &Matrix,
    y: &[usize],
    prototypes: &Matrix,
    temperature: f64,
) -> Result<f64> {
    let k = prototypes.rows();
    if y.len() != z_x.rows() {
        return Err(SscError::DimensionMismatch(format!(
            "{} embeddings but {} labels",
            z_x.rows(),
            y.len()
        )));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= k) {
        return Err(SscError::LabelOutOfRange { label, k });
    }
    let mut labels = vec![0; k + 1];
    labels[1..].iter_mut().enumerate().for_each(|(c, l)| *l = c);
    let mut lambda = vec![0.0; k + 1];
    lambda[0] = 1.0;
    let mut mask = vec![false; k + 1];
    mask[0] = true;

    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let single = z_x.slice_rows(i, i + 1);
        let z = Matrix::vstack(&[&single, prototypes])?;
        labels[0] = yi;
        let batch = ContrastiveBatch::new(z, labels.clone(), lambda.clone(), mask.clone())?;
        total += ssc_loss(&batch, temperature)?.value;
    }
    Ok(total / y.len() as f64)
}

fn check_unit_rows(z: &Matrix) -> Result<()> {
    for (i, row) in z.row_iter().enumerate() {
        let norm = l2_norm(row);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(SscError::InvalidBatch(format!(
                "row {i} has norm {norm}, expected unit norm"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // ln(1 + e^-1) and ln(2 + e), evaluated independently.
    const LN_ONE_PLUS_INV_E: f64 = 0.313_261_687_518_222_9;
    const LN_TWO_PLUS_E: f64 = 1.551_444_713_932_051_5;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn frozen_constants() {
        assert!((LN_ONE_PLUS_INV_E - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((LN_TWO_PLUS_E - (2.0 + 1.0f64.exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn supcon_lone_positive_pair_is_zero() {
        let out = supcon_loss(&m(&[&[1.0, 0.0], &[1.0, 0.0]]), &[0, 0], 1.0).unwrap();
        assert!(out.value.abs() < 1e-15);
    }

    #[test]
    fn supcon_skips_positive_less_anchor() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let out = supcon_loss(&z, &[0, 0, 1], 1.0).unwrap();
        assert!((out.value - LN_ONE_PLUS_INV_E).abs() < 1e-12);
        assert_eq!(out.per_anchor[2], 0.0);
    }

    #[test]
    fn supcon_two_classes_cross() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let out = supcon_loss(&z, &[0, 0, 1, 1], 1.0).unwrap();
        assert!((out.value - LN_TWO_PLUS_E).abs() < 1e-12);
    }

    #[test]
    fn supcon_errors() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            supcon_loss(&z, &[0, 1], 1.0),
            Err(SscError::NoValidAnchor)
        ));
        assert!(matches!(
            supcon_loss(&z, &[0, 0], 0.0),
            Err(SscError::NonPositiveTemperature(_))
        ));
        let not_unit = m(&[&[2.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            supcon_loss(&not_unit, &[0, 0], 1.0),
            Err(SscError::InvalidBatch(_))
        ));
    }

    #[test]
    fn ssc_zero_weight_anchor() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let batch =
            ContrastiveBatch::new(z, vec![0, 0, 1], vec![1.0, 1.0, 0.0], vec![true; 3]).unwrap();
        let out = ssc_loss(&batch, 1.0).unwrap();
        assert!((out.value - LN_ONE_PLUS_INV_E).abs() < 1e-12);
    }

    #[test]
    fn ssc_all_zero_weights_is_no_valid_anchor() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let batch = ContrastiveBatch::new(z, vec![0, 0], vec![0.0, 0.0], vec![true; 2]).unwrap();
        assert!(matches!(
            ssc_loss(&batch, 1.0),
            Err(SscError::NoValidAnchor)
        ));
    }

    #[test]
    fn batch_validation() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(ContrastiveBatch::new(z.clone(), vec![0], vec![1.0; 2], vec![true; 2]).is_err());
        assert!(ContrastiveBatch::new(z, vec![0, 0], vec![1.0, -1.0], vec![true; 2]).is_err());
    }

    #[test]
    fn self_loss_examples() {
        let same = m(&[&[0.6, 0.8], &[0.6, 0.8]]);
        assert!(self_loss(&same, 1, 1.0).unwrap().value.abs() < 1e-15);

        let z = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        // the positive is aligned, the two negatives are orthogonal
        let out = self_loss(&z, 2, 1.0).unwrap();
        assert!((out.value - (LN_TWO_PLUS_E - 1.0)).abs() < 1e-12);

        assert!(matches!(
            self_loss(&z, 3, 1.0),
            Err(SscError::OddRowCount {
                expected: 6,
                actual: 4
            })
        ));
    }

    #[test]
    fn sibling_labels_layout() {
        assert_eq!(sibling_view_labels(4), vec![0, 1, 2, 3, 0, 1, 2, 3]);
        assert!(positive_counts(&sibling_view_labels(4))
            .iter()
            .all(|&c| c == 1));
    }

    #[test]
    fn ce_prototype_examples() {
        let protos = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = ce_prototype_loss(&m(&[&[1.0, 0.0]]), &[0], &protos).unwrap();
        assert!((out.value - LN_ONE_PLUS_INV_E).abs() < 1e-12);

        let same = m(&[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        let z = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let out = ce_prototype_loss(&z, &[2, 0], &same).unwrap();
        assert!((out.value - 3.0f64.ln()).abs() < 1e-12);

        assert!(matches!(
            ce_prototype_loss(&z, &[2, 0], &protos),
            Err(SscError::LabelOutOfRange { label: 2, k: 2 })
        ));
    }

    #[test]
    fn cross_entropy_masked_examples() {
        let logits = m(&[&[1.0, 0.0], &[3.0, -2.0]]);
        assert_eq!(
            cross_entropy_masked(&logits, &[0, 1], &[false, false]).unwrap(),
            0.0
        );

        let one = m(&[&[1.0, 0.0]]);
        let v = cross_entropy_masked(&one, &[0], &[true]).unwrap();
        assert!((v - LN_ONE_PLUS_INV_E).abs() < 1e-12);

        let uniform = m(&[&[0.3; 4], &[0.3; 4]]);
        let v = cross_entropy_masked(&uniform, &[1, 3], &[true, true]).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);

        // masked rows still count in the 1/n normaliser
        let v = cross_entropy_masked(&uniform, &[1, 3], &[true, false]).unwrap();
        assert!((v - 0.5 * 4.0f64.ln()).abs() < 1e-12);

        assert!(matches!(
            cross_entropy_masked(&one, &[2], &[true]),
            Err(SscError::LabelOutOfRange { label: 2, k: 2 })
        ));
    }

    #[test]
    fn anchored_supcon_matches_ce_on_example() {
        let protos = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let z = m(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let ce = ce_prototype_loss(&z, &[0, 1], &protos).unwrap().value;
        let sc = anchored_prototype_supcon(&z, &[0, 1], &protos, 1.0).unwrap();
        assert!((ce - sc).abs() < 1e-12);
    }

    #[test]
    fn finite_at_default_temperature() {
        let z = m(&[&[1.0, 0.0], &[0.8, 0.6], &[-1.0, 0.0], &[0.0, 1.0]]);
        let y = [0, 0, 1, 1];
        for t in [0.01, 0.1, 1.0] {
            let out = supcon_loss(&z, &y, t).unwrap();
            assert!(out.value.is_finite());
            assert!(out.grad_z.is_finite());
            assert!(out.per_anchor.iter().all(|v| v.is_finite()));
        }
    }
}
