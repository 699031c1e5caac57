//! Reference evaluators written straight from the loss definitions, with no
//! shared code with the production kernels: nested loops, plain `exp`/`ln`,
//! no similarity matrix, no log-sum-exp shift.

/// Weighted contrastive loss by triple loop. `None` when no anchor has both
/// a positive and a positive weight.
pub fn naive_ssc_loss(
    z: &[Vec<f64>],
    y: &[usize],
    lambda: &[f64],
    mask: &[bool],
    temperature: f64,
) -> Option<f64> {
    let n = z.len();
    let sim = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for k in 0..z[a].len() {
            s += z[a][k] * z[b][k];
        }
        s / temperature
    };
    let mut weight_sum = 0.0;
    let mut total = 0.0;
    let mut any = false;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && y[p] == y[i]).collect();
        if positives.is_empty() {
            continue;
        }
        any = true;
        weight_sum += lambda[i];
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += sim(i, j).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += (sim(i, p).exp() / denom).ln();
        }
        total += -lambda[i] / positives.len() as f64 * inner;
    }
    if !any || weight_sum <= 0.0 {
        return None;
    }
    Some(total / weight_sum)
}

/// Unweighted supervised contrastive loss by triple loop.
pub fn naive_supcon_loss(z: &[Vec<f64>], y: &[usize], temperature: f64) -> Option<f64> {
    let n = z.len();
    naive_ssc_loss(z, y, &vec![1.0; n], &vec![true; n], temperature)
}

/// `(1/B) Σ_i -log(exp(z_i·c_{y_i}) / Σ_k exp(z_i·c_k))` by direct evaluation.
pub fn naive_prototype_ce(z: &[Vec<f64>], y: &[usize], prototypes: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (zi, &yi) in z.iter().zip(y) {
        let logit = |c: &Vec<f64>| zi.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let denom: f64 = prototypes.iter().map(|c| logit(c).exp()).sum();
        total -= (logit(&prototypes[yi]).exp() / denom).ln();
    }
    total / z.len() as f64
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Gradient entries smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_supcon_reproduces_hand_values() {
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let v = naive_supcon_loss(&z, &[0, 0, 1], 1.0).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-14);
        let z = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let v = naive_supcon_loss(&z, &[0, 0, 1, 1], 1.0).unwrap();
        assert!((v - (2.0 + 1.0f64.exp()).ln()).abs() < 1e-14);
        assert!(naive_supcon_loss(&z, &[0, 1, 2, 3], 1.0).is_none());
    }

    #[test]
    fn central_differences_of_a_cubic() {
        let g = central_differences(&[1.0, -2.0], 1e-5, |x| x[0].powi(3) + 2.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }
}
