//! Property suites behind the `verify` command: oracle equivalence of the
//! contrastive loss, the cross-entropy/prototype identity, the
//! self-supervised identity, analytic-versus-numeric gradients and the
//! pseudo-label contract. Every suite uses fixed seeds.

pub mod oracle;

use std::fmt;

use crate::losses::{
    anchored_prototype_supcon, ce_prototype_loss, positive_counts, self_loss, sibling_view_labels,
    ssc_loss, supcon_loss, ContrastiveBatch,
};
use crate::model::{backward, forward, init_params, ModelDims, ModelParams};
use crate::numerics::{row_normalize, Matrix, SeededRng};
use crate::pseudo::{assign_pseudo_labels, prototype_probabilities};

use oracle::{central_differences, max_relative_error, naive_prototype_ce, naive_ssc_loss};

pub const ORACLE_TOL: f64 = 1e-9;
pub const CE_EQUIVALENCE_TOL: f64 = 1e-9;
pub const SELF_IDENTITY_TOL: f64 = 1e-12;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Largest error observed (meaning depends on the suite; 0 or 1 for
    /// pass/fail contracts counts violated cases).
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<28} cases={:<4} max_error={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Perturbs analytic gradients before comparison. Only the gradient
    /// suites should fail when set.
    pub corrupt_gradient: bool,
}

pub fn run_all(opts: VerifyOptions) -> Vec<SuiteReport> {
    vec![
        oracle_equivalence(100, 1),
        ce_prototype_equivalence(100, 2),
        self_loss_identity(100, 3),
        gradient_ssc(12, 4, opts),
        gradient_model(10, 5, opts),
        pseudo_label_contract(200, 6),
    ]
}

/// A random contrastive batch: unit rows, labels in `0..k`, random weights
/// and mask, and a temperature from {0.01, 0.1, 1}.
#[derive(Debug, Clone)]
pub struct RandomBatch {
    pub batch: ContrastiveBatch,
    pub temperature: f64,
}

pub fn random_batch(rng: &mut SeededRng, max_n: usize, max_d: usize, max_k: usize) -> RandomBatch {
    let n = 2 + rng.below(max_n - 1);
    let d = 2 + rng.below(max_d - 1);
    let k = 2 + rng.below(max_k - 1);
    let z = unit_rows(n, d, rng);
    let y: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let lambda: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 2.0)).collect();
    let mask: Vec<bool> = (0..n).map(|_| rng.uniform(0.0, 1.0) < 0.8).collect();
    let temperature = [0.01, 0.1, 1.0][rng.below(3)];
    RandomBatch {
        batch: ContrastiveBatch::new(z, y, lambda, mask).expect("valid random batch"),
        temperature,
    }
}

pub fn unit_rows(n: usize, d: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let v = rng.unit_vector(d);
        m.row_mut(i).copy_from_slice(&v);
    }
    m
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Vectorised weighted and unweighted losses against the triple-loop oracle.
pub fn oracle_equivalence(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut max_err: f64 = 0.0;
    let mut ok = true;
    for _ in 0..cases {
        let RandomBatch { batch, temperature } = random_batch(&mut rng, 16, 8, 5);
        let rows = rows_of(&batch.z);
        let expected = naive_ssc_loss(
            &rows,
            &batch.y,
            &batch.lambda,
            &batch.anchor_mask,
            temperature,
        );
        match (ssc_loss(&batch, temperature), expected) {
            (Ok(out), Some(e)) => max_err = max_err.max((out.value - e).abs()),
            (Err(_), None) => {}
            _ => ok = false,
        }
        let expected = oracle::naive_supcon_loss(&rows, &batch.y, temperature);
        match (supcon_loss(&batch.z, &batch.y, temperature), expected) {
            (Ok(out), Some(e)) => max_err = max_err.max((out.value - e).abs()),
            (Err(_), None) => {}
            _ => ok = false,
        }
    }
    SuiteReport {
        name: "oracle_equivalence",
        passed: ok && max_err < ORACLE_TOL,
        max_error: max_err,
        tolerance: ORACLE_TOL,
        cases,
    }
}

/// Prototype cross-entropy against the data-row-anchored contrastive loss at
/// `T = 1`, plus the cross-entropy against its direct evaluation.
pub fn ce_prototype_equivalence(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut max_err: f64 = 0.0;
    let mut ok = true;
    for _ in 0..cases {
        let b = 1 + rng.below(12);
        let d = 2 + rng.below(7);
        let k = 2 + rng.below(4);
        let z = unit_rows(b, d, &mut rng);
        let protos = unit_rows(k, d, &mut rng);
        let y: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
        let (Ok(ce), Ok(sc)) = (
            ce_prototype_loss(&z, &y, &protos),
            anchored_prototype_supcon(&z, &y, &protos, 1.0),
        ) else {
            ok = false;
            continue;
        };
        let naive = naive_prototype_ce(&rows_of(&z), &y, &rows_of(&protos));
        max_err = max_err
            .max((ce.value - sc).abs())
            .max((ce.value - naive).abs());
    }
    SuiteReport {
        name: "ce_prototype_equivalence",
        passed: ok && max_err < CE_EQUIVALENCE_TOL,
        max_error: max_err,
        tolerance: CE_EQUIVALENCE_TOL,
        cases,
    }
}

/// `self_loss(Z, μB) == supcon_loss(Z, [0..μB, 0..μB])`.
pub fn self_loss_identity(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut max_err: f64 = 0.0;
    let mut ok = true;
    for _ in 0..cases {
        let mu_b = 1 + rng.below(10);
        let d = 2 + rng.below(7);
        let t = [0.01, 0.1, 1.0][rng.below(3)];
        let z = unit_rows(2 * mu_b, d, &mut rng);
        match (
            self_loss(&z, mu_b, t),
            supcon_loss(&z, &sibling_view_labels(mu_b), t),
        ) {
            (Ok(a), Ok(b)) => {
                max_err = max_err
                    .max((a.value - b.value).abs())
                    .max(a.grad_z.max_abs_diff(&b.grad_z));
                // the pairing is also checked against the direct evaluation
                match oracle::naive_supcon_loss(&rows_of(&z), &sibling_view_labels(mu_b), t) {
                    Some(e) if (a.value - e).abs() < ORACLE_TOL => {}
                    _ => ok = false,
                }
            }
            _ => ok = false,
        }
    }
    SuiteReport {
        name: "self_loss_identity",
        passed: ok && max_err < SELF_IDENTITY_TOL,
        max_error: max_err,
        tolerance: SELF_IDENTITY_TOL,
        cases,
    }
}

/// Analytic `grad_z` of the weighted loss (data rows and prototype rows of
/// a stacked batch) and of the prototype cross-entropy against central
/// differences.
pub fn gradient_ssc(cases: usize, seed: u64, opts: VerifyOptions) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut max_err: f64 = 0.0;
    let mut ok = true;
    let mut done = 0;
    while done < cases {
        // stacked [data; prototypes] batch with prototype labels 0..k
        let n = 3 + rng.below(8);
        let d = 2 + rng.below(5);
        let k = 2 + rng.below(3);
        let t = [0.1, 0.5, 1.0][done % 3];
        let data = unit_rows(n, d, &mut rng);
        let protos = unit_rows(k, d, &mut rng);
        let z = Matrix::vstack(&[&data, &protos]).expect("same width");
        let mut y: Vec<usize> = (0..n).map(|_| rng.below(k + 2)).collect();
        y.extend(0..k);
        let lambda: Vec<f64> = (0..n + k).map(|_| rng.uniform(0.1, 2.0)).collect();
        let mask = vec![true; n + k];
        let batch = ContrastiveBatch::new(z.clone(), y.clone(), lambda.clone(), mask.clone())
            .expect("valid batch");
        let Ok(out) = ssc_loss(&batch, t) else {
            continue;
        };
        let mut analytic = out.grad_z.data().to_vec();
        if opts.corrupt_gradient {
            analytic[0] = analytic[0] * 1.5 + 0.1;
        }
        let numeric = central_differences(z.data(), FD_STEP, |flat| {
            let zz = Matrix::new(n + k, d, flat.to_vec()).expect("shape");
            let b = ContrastiveBatch::new_unnormalized(zz, y.clone(), lambda.clone(), mask.clone())
                .expect("valid batch");
            ssc_loss(&b, t).map(|o| o.value).unwrap_or(f64::NAN)
        });
        max_err = max_err.max(max_relative_error(&analytic, &numeric));

        // prototype cross-entropy, over data rows and prototype rows
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let ce = match ce_prototype_loss(&data, &labels, &protos) {
            Ok(ce) => ce,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        let mut analytic: Vec<f64> = ce.grad_z.data().to_vec();
        analytic.extend_from_slice(ce.grad_prototypes.data());
        if opts.corrupt_gradient {
            analytic[0] = analytic[0] * 1.5 + 0.1;
        }
        let flat: Vec<f64> = data.data().iter().chain(protos.data()).copied().collect();
        let numeric = central_differences(&flat, FD_STEP, |v| {
            let zz = Matrix::new(n, d, v[..n * d].to_vec()).expect("shape");
            let pp = Matrix::new(k, d, v[n * d..].to_vec()).expect("shape");
            ce_prototype_loss(&zz, &labels, &pp)
                .map(|o| o.value)
                .unwrap_or(f64::NAN)
        });
        max_err = max_err.max(max_relative_error(&analytic, &numeric));
        done += 1;
    }
    SuiteReport {
        name: "gradient_ssc",
        passed: ok && max_err < GRAD_REL_TOL,
        max_error: max_err,
        tolerance: GRAD_REL_TOL,
        cases,
    }
}

/// Loss of `[forward(x); prototypes]` as a function of every parameter.
pub fn composed_loss(
    params: &ModelParams,
    x: &Matrix,
    y: &[usize],
    lambda: &[f64],
    temperature: f64,
) -> Option<f64> {
    let (z, _) = forward(params, x).ok()?;
    let stacked = Matrix::vstack(&[&z, &params.prototypes]).ok()?;
    let n = stacked.rows();
    let batch =
        ContrastiveBatch::new_unnormalized(stacked, y.to_vec(), lambda.to_vec(), vec![true; n])
            .ok()?;
    ssc_loss(&batch, temperature).ok().map(|o| o.value)
}

/// Analytic gradients of `ssc_loss ∘ forward` w.r.t. all parameters,
/// prototypes included, against central differences.
pub fn gradient_model(cases: usize, seed: u64, opts: VerifyOptions) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut max_err: f64 = 0.0;
    let mut ok = true;
    for case in 0..cases {
        let dims = ModelDims {
            input: 2 + rng.below(4),
            hidden: vec![3 + rng.below(4); 1 + case % 2],
            proj_hidden: 3 + rng.below(4),
            embed: 2 + rng.below(3),
        };
        let k = 2 + rng.below(3);
        let mut init_rng = rng.child_indexed("init", case as u64);
        let mut params = match init_params(&dims, k, &mut init_rng) {
            Ok(p) => p,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        // nonzero biases so the check also covers them
        for layer in params
            .encoder
            .iter_mut()
            .chain(params.projection.iter_mut())
        {
            layer.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
        }
        let n = 4 + rng.below(6);
        let x = Matrix::random_normal(n, dims.input, 1.0, &mut rng);
        let mut y: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        y.extend(0..k);
        let lambda: Vec<f64> = (0..n + k).map(|_| rng.uniform(0.2, 1.5)).collect();
        let t = [0.1, 0.5, 1.0][case % 3];

        let Ok((z, trace)) = forward(&params, &x) else {
            ok = false;
            continue;
        };
        let stacked = Matrix::vstack(&[&z, &params.prototypes]).expect("same width");
        let batch = ContrastiveBatch::new(stacked, y.clone(), lambda.clone(), vec![true; n + k])
            .expect("valid batch");
        let Ok(out) = ssc_loss(&batch, t) else {
            ok = false;
            continue;
        };
        let Ok(mut grads) = backward(&params, &trace, &out.grad_z.slice_rows(0, n)) else {
            ok = false;
            continue;
        };
        grads.prototypes = out.grad_z.slice_rows(n, n + k);
        let mut analytic: Vec<f64> = grads.tensors().concat();
        if opts.corrupt_gradient {
            analytic[0] = analytic[0] * 1.5 + 0.1;
        }

        let flat: Vec<f64> = params
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        let mut probe = params.clone();
        let numeric = central_differences(&flat, FD_STEP, |v| {
            let mut offset = 0;
            for (_, t) in probe.tensors_mut() {
                let len = t.len();
                t.copy_from_slice(&v[offset..offset + len]);
                offset += len;
            }
            composed_loss(&probe, &x, &y, &lambda, t).unwrap_or(f64::NAN)
        });
        max_err = max_err.max(max_relative_error(&analytic, &numeric));
    }
    SuiteReport {
        name: "gradient_model",
        passed: ok && max_err < GRAD_REL_TOL,
        max_error: max_err,
        tolerance: GRAD_REL_TOL,
        cases,
    }
}

/// Partition, view duplication, `+K` shift, strict threshold, single
/// positive for unconfident rows, and max probability decreasing in `T'`.
/// `max_error` counts violated cases.
pub fn pseudo_label_contract(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = SeededRng::new(seed);
    let mut violations = 0usize;
    for _ in 0..cases {
        let mu_b = 1 + rng.below(12);
        let d = 2 + rng.below(6);
        let k = 2 + rng.below(5);
        let protos = unit_rows(k, d, &mut rng);
        // mix random rows with rows pulled towards a prototype so both
        // branches are exercised
        let mut z_w = unit_rows(mu_b, d, &mut rng);
        for i in 0..mu_b {
            if rng.uniform(0.0, 1.0) < 0.5 {
                let c = rng.below(k);
                let row: Vec<f64> = z_w
                    .row(i)
                    .iter()
                    .zip(protos.row(c))
                    .map(|(a, p)| 0.1 * a + p)
                    .collect();
                z_w.row_mut(i).copy_from_slice(&row);
            }
        }
        let z_w = row_normalize(&z_w).expect("nonzero rows");
        let tau = rng.uniform(0.3, 0.99);
        let t_prime = [0.04, 0.1, 0.5][rng.below(3)];
        let Ok(r) = assign_pseudo_labels(&z_w, &protos, tau, t_prime, k) else {
            violations += 1;
            continue;
        };
        let mut good = r.confident.len() == mu_b && r.labels.len() == 2 * mu_b;
        good &= r.confident_count() + r.confident.iter().filter(|c| !**c).count() == mu_b;
        for i in 0..mu_b {
            let row = r.probabilities.row(i);
            let sum: f64 = row.iter().sum();
            good &= (sum - 1.0).abs() < 1e-9;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            good &= r.confident[i] == (max > tau);
            good &= r.labels[i] == r.labels[i + mu_b];
            good &= if r.confident[i] {
                r.labels[i] < k && r.labels[i] == r.hard_labels[i]
            } else {
                r.labels[i] == k + i
            };
        }
        // unconfident anchors in a stacked batch have exactly one positive
        let mut labels: Vec<usize> = (0..k).collect();
        labels.extend_from_slice(&r.labels);
        let pos = positive_counts(&labels);
        for i in 0..mu_b {
            if !r.confident[i] {
                good &= pos[k + i] == 1 && pos[k + mu_b + i] == 1;
            }
        }
        // max probability strictly decreasing in T' for non-uniform rows
        let temps = [0.02, 0.04, 0.08, 0.16, 0.32, 1.0];
        let maxes: Vec<Vec<f64>> = temps
            .iter()
            .map(|&t| {
                let p = prototype_probabilities(&z_w, &protos, t).expect("valid inputs");
                p.row_iter()
                    .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect();
        for i in 0..mu_b {
            for w in maxes.windows(2) {
                // a row already saturated at 1.0 cannot decrease visibly
                good &= w[1][i] < w[0][i] || w[0][i] == 1.0;
            }
        }
        if !good {
            violations += 1;
        }
    }
    SuiteReport {
        name: "pseudo_label_contract",
        passed: violations == 0,
        max_error: violations as f64,
        tolerance: 0.0,
        cases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_only_breaks_gradient_suites() {
        let opts = VerifyOptions {
            corrupt_gradient: true,
        };
        assert!(!gradient_ssc(2, 4, opts).passed);
        assert!(!gradient_model(2, 5, opts).passed);
        assert!(oracle_equivalence(10, 1).passed);
        assert!(self_loss_identity(10, 3).passed);
    }
}
