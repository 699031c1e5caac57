//! Experiment configuration files.
//!
//! ```toml
//! [dataset]
//! kind = "blobs"          # blobs | moons | idx | csv
//! k = 4
//! input_dim = 16
//! n_per_class = 629
//! spread = 0.15
//! seed = 42
//!
//! [split]
//! labels_per_class = 4
//! val_fraction = 0.2
//! seed = 7
//!
//! [train]                 # any TrainConfig field
//! total_steps = 3000
//!
//! [augment]
//! strength = 10           # plus optional per-field overrides
//!
//! [output]
//! dir = "runs/blobs"
//! ```
//!
//! Unknown keys are rejected in every section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_gaussian_blobs, gen_two_moons, load_csv, load_idx, split_semi, AugmentConfig, Dataset,
    SemiSplit,
};
use crate::error::{Result, SscError};
use crate::numerics::SeededRng;
use crate::selftrain::TrainConfig;

/// Environment variable that replaces `[output].dir`.
pub const OUTPUT_DIR_ENV: &str = "SSC_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        k: usize,
        input_dim: usize,
        n_per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Moons {
        n: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub labels_per_class: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            labels_per_class: 4,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Strength level plus optional overrides of individual fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub strength: Option<u32>,
    pub weak_noise_sigma: Option<f64>,
    pub strong_noise_sigma: Option<f64>,
    pub strong_mask_fraction: Option<f64>,
    pub strong_scale_range: Option<(f64, f64)>,
}

impl AugmentSection {
    pub fn resolve(&self) -> Result<AugmentConfig> {
        let mut aug =
            AugmentConfig::from_strength(self.strength.unwrap_or(AugmentConfig::DEFAULT_STRENGTH));
        if let Some(v) = self.weak_noise_sigma {
            aug.weak_noise_sigma = v;
        }
        if let Some(v) = self.strong_noise_sigma {
            aug.strong_noise_sigma = v;
        }
        if let Some(v) = self.strong_mask_fraction {
            aug.strong_mask_fraction = v;
        }
        if let Some(v) = self.strong_scale_range {
            aug.strong_scale_range = v;
        }
        aug.validate()?;
        Ok(aug)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub metrics_file: String,
    /// Adds wall-clock time to step records; makes metrics files differ between runs.
    pub record_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            metrics_file: "metrics.ndjson".into(),
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SscError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file. Relative dataset paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SscError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| SscError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.dataset {
            DatasetConfig::Idx { images, labels } => {
                *images = rebase(base, images);
                *labels = rebase(base, labels);
            }
            DatasetConfig::Csv { path, .. } => *path = rebase(base, path),
            _ => {}
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.resolve()?;
        if self.split.labels_per_class == 0 {
            return Err(SscError::Config(
                "split.labels_per_class must be >= 1".into(),
            ));
        }
        if self.output.metrics_file.is_empty() {
            return Err(SscError::Config(
                "output.metrics_file must not be empty".into(),
            ));
        }
        match &self.dataset {
            DatasetConfig::Blobs { spread, .. } if !(*spread >= 0.0) => Err(SscError::Config(
                format!("dataset.spread {spread} must be >= 0"),
            )),
            DatasetConfig::Moons { noise, .. } if !(*noise >= 0.0) => Err(SscError::Config(
                format!("dataset.noise {noise} must be >= 0"),
            )),
            _ => Ok(()),
        }
    }

    /// `$SSC_OUTPUT_DIR` when set, `[output].dir` otherwise.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Blobs {
                k,
                input_dim,
                n_per_class,
                spread,
                seed,
            } => gen_gaussian_blobs(
                *k,
                *input_dim,
                *n_per_class,
                *spread,
                &mut SeededRng::new(*seed),
            ),
            DatasetConfig::Moons { n, noise, seed } => {
                gen_two_moons(*n, *noise, &mut SeededRng::new(*seed))
            }
            DatasetConfig::Idx { images, labels } => load_idx(images, labels),
            DatasetConfig::Csv { path, has_header } => load_csv(path, *has_header),
        }
    }

    pub fn build_split(&self) -> Result<SemiSplit> {
        let d = self.build_dataset()?;
        split_semi(
            &d,
            self.split.labels_per_class,
            self.split.val_fraction,
            &mut SeededRng::new(self.split.seed),
        )
    }

    /// Every setting with defaults filled in, as recorded at the top of
    /// each metrics file.
    pub fn effective(&self, train: &TrainConfig, split: &SemiSplit) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "dataset": self.dataset,
            "split": {
                "labels_per_class": self.split.labels_per_class,
                "val_fraction": self.split.val_fraction,
                "seed": self.split.seed,
                "labeled": split.labeled_y.len(),
                "unlabeled": split.unlabeled.rows(),
                "val": split.val_y.len(),
                "input_dim": split.input_dim(),
            },
            "train": train,
            "augment": self.augment.resolve()?,
        }))
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
