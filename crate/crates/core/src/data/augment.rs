//! Weak and strong perturbations of feature vectors.
//!
//! Weak: additive Gaussian noise. Strong: additive noise, a random
//! per-row scale, then a fixed number of zeroed coordinates per row.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_mask_fraction: f64,
    pub strong_scale_range: (f64, f64),
    /// Level the strong parameters were derived from (see [`AugmentConfig::from_strength`]).
    pub strength: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::from_strength(Self::DEFAULT_STRENGTH)
    }
}

impl AugmentConfig {
    pub const DEFAULT_STRENGTH: u32 = 10;
    pub const WEAK_NOISE_SIGMA: f64 = 0.02;

    /// Maps an integer level linearly onto the strong parameters:
    /// noise `0.015·s`, mask fraction `0.02·s` (capped at 0.6), and scale
    /// range `1 ± 0.015·s` (capped at ±0.6). Every strong parameter grows
    /// with `s`; the weak sigma stays fixed.
    pub fn from_strength(strength: u32) -> Self {
        let s = f64::from(strength);
        let width = (0.015 * s).min(0.6);
        Self {
            weak_noise_sigma: Self::WEAK_NOISE_SIGMA,
            strong_noise_sigma: (0.015 * s).max(Self::WEAK_NOISE_SIGMA),
            strong_mask_fraction: (0.02 * s).min(0.6),
            strong_scale_range: (1.0 - width, 1.0 + width),
            strength,
        }
    }

    /// No perturbation at all.
    pub fn identity() -> Self {
        Self {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_mask_fraction: 0.0,
            strong_scale_range: (1.0, 1.0),
            strength: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.strong_scale_range;
        let bad = |msg: String| Err(SscError::Config(format!("augment: {msg}")));
        if !(self.weak_noise_sigma >= 0.0) {
            return bad(format!("weak_noise_sigma {} < 0", self.weak_noise_sigma));
        }
        if !(self.strong_noise_sigma >= self.weak_noise_sigma) {
            return bad(format!(
                "strong_noise_sigma {} below weak_noise_sigma {}",
                self.strong_noise_sigma, self.weak_noise_sigma
            ));
        }
        if !(0.0..1.0).contains(&self.strong_mask_fraction) {
            return bad(format!(
                "strong_mask_fraction {} outside [0, 1)",
                self.strong_mask_fraction
            ));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!(
                "strong_scale_range ({lo}, {hi}) must be positive and ordered"
            ));
        }
        Ok(())
    }

    /// Number of coordinates zeroed per row of width `dim`.
    pub fn masked_count(&self, dim: usize) -> usize {
        ((self.strong_mask_fraction * dim as f64).round() as usize).min(dim)
    }
}

pub fn augment_weak(x: &Matrix, cfg: &AugmentConfig, rng: &mut SeededRng) -> Matrix {
    let mut out = x.clone();
    if cfg.weak_noise_sigma > 0.0 {
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v += cfg.weak_noise_sigma * rng.normal());
    }
    out
}

pub fn augment_strong(x: &Matrix, cfg: &AugmentConfig, rng: &mut SeededRng) -> Matrix {
    let mut out = x.clone();
    let dim = x.cols();
    let n_mask = cfg.masked_count(dim);
    let (lo, hi) = cfg.strong_scale_range;
    let mut coords: Vec<usize> = (0..dim).collect();
    for i in 0..out.rows() {
        let scale = rng.uniform(lo, hi);
        let row = out.row_mut(i);
        for v in row.iter_mut() {
            let noise = if cfg.strong_noise_sigma > 0.0 {
                cfg.strong_noise_sigma * rng.normal()
            } else {
                0.0
            };
            *v = (*v + noise) * scale;
        }
        if n_mask > 0 {
            rng.shuffle(&mut coords);
            for &c in &coords[..n_mask] {
                row[c] = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_config_is_identity() {
        let x = Matrix::random_normal(7, 5, 1.0, &mut SeededRng::new(1));
        let cfg = AugmentConfig::identity();
        cfg.validate().unwrap();
        let mut rng = SeededRng::new(2);
        assert_eq!(augment_weak(&x, &cfg, &mut rng), x);
        assert_eq!(augment_strong(&x, &cfg, &mut rng), x);
    }

    #[test]
    fn exact_mask_count() {
        // strictly positive entries so only masking can produce zeros
        let x = Matrix::new(20, 16, vec![1.0; 320]).unwrap();
        let cfg = AugmentConfig {
            strong_mask_fraction: 0.25,
            ..AugmentConfig::identity()
        };
        let out = augment_strong(&x, &cfg, &mut SeededRng::new(3));
        for row in out.row_iter() {
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 4);
        }
    }

    #[test]
    fn strong_views_differ() {
        let x = Matrix::random_normal(64, 8, 1.0, &mut SeededRng::new(4));
        let cfg = AugmentConfig::default();
        let root = SeededRng::new(5);
        let a = augment_strong(&x, &cfg, &mut root.child("view-1"));
        let b = augment_strong(&x, &cfg, &mut root.child("view-2"));
        for (ra, rb) in a.row_iter().zip(b.row_iter()) {
            let d: f64 = ra.iter().zip(rb).map(|(p, q)| (p - q).powi(2)).sum();
            assert!(d > 0.0);
        }
    }

    #[test]
    fn strength_levels_are_monotone() {
        let mut prev = AugmentConfig::from_strength(3);
        prev.validate().unwrap();
        for s in 4..=20 {
            let cfg = AugmentConfig::from_strength(s);
            cfg.validate().unwrap();
            assert!(cfg.strong_noise_sigma > prev.strong_noise_sigma);
            assert!(cfg.strong_mask_fraction > prev.strong_mask_fraction);
            let w = cfg.strong_scale_range.1 - cfg.strong_scale_range.0;
            let pw = prev.strong_scale_range.1 - prev.strong_scale_range.0;
            assert!(w > pw);
            assert!(cfg.strong_noise_sigma >= cfg.weak_noise_sigma);
            prev = cfg;
        }
    }

    #[test]
    fn expected_perturbation_grows_with_strength() {
        let x = Matrix::random_normal(1000, 16, 0.3, &mut SeededRng::new(6));
        let mut last = 0.0;
        for s in [3, 6, 10, 15, 20] {
            let out = augment_strong(&x, &AugmentConfig::from_strength(s), &mut SeededRng::new(7));
            let mean: f64 = out
                .row_iter()
                .zip(x.row_iter())
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(p, q)| (p - q).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / 1000.0;
            assert!(mean >= last, "strength {s}: {mean} < {last}");
            last = mean;
        }
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut cfg = AugmentConfig::default();
        cfg.strong_noise_sigma = cfg.weak_noise_sigma / 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.strong_mask_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.strong_scale_range = (1.2, 0.8);
        assert!(cfg.validate().is_err());
    }
}
