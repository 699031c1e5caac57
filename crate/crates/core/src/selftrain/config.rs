use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};
use crate::model::ModelDims;

/// Which objective a run optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Unified contrastive loss over labeled rows, both strong views and prototypes.
    Ssc,
    /// Prototype-head cross-entropy on labeled rows plus thresholded
    /// pseudo-label cross-entropy on strong views.
    FixmatchCe,
    /// Contrastive loss over labeled rows and prototypes only.
    SupconLabeledOnly,
    /// Prototype-head cross-entropy on labeled rows only.
    CeLabeledOnly,
}

impl Mode {
    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Mode::Ssc | Mode::FixmatchCe)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ssc => "ssc",
            Mode::FixmatchCe => "fixmatch_ce",
            Mode::SupconLabeledOnly => "supcon_labeled_only",
            Mode::CeLabeledOnly => "ce_labeled_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Labeled examples per batch.
    pub b: usize,
    /// Unlabeled examples per labeled example.
    pub mu: usize,
    /// Class count; 0 means "take it from the dataset".
    pub k: usize,
    /// Contrastive temperature.
    pub t: f64,
    /// Prototype head temperature.
    pub t_prime: f64,
    pub tau: f64,
    pub lambda_x: f64,
    pub lambda_conf: f64,
    pub lambda_unconf: f64,
    pub lambda_proto: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub steps_per_epoch: usize,
    pub mode: Mode,
    /// Two strong views in the cross-entropy baseline.
    pub double_strong_aug: bool,
    /// Extra self-supervised term: over all strong views in the
    /// cross-entropy baseline, over the unconfident examples' views in SSC.
    pub add_self_loss: bool,
    pub self_loss_weight: f64,
    /// Apply the weak augmentation to labeled inputs.
    pub augment_labeled: bool,
    pub hidden: Vec<usize>,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// Seeds used by ablation runs.
    pub ablation_seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            b: 16,
            mu: 7,
            k: 0,
            t: 0.01,
            t_prime: 0.04,
            tau: 0.95,
            lambda_x: 1.0,
            lambda_conf: 1.0,
            lambda_unconf: 0.2,
            lambda_proto: 1.0,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_steps: 3000,
            steps_per_epoch: 500,
            mode: Mode::Ssc,
            double_strong_aug: false,
            add_self_loss: false,
            self_loss_weight: 1.0,
            augment_labeled: true,
            hidden: vec![64],
            proj_hidden: 64,
            embed_dim: 256,
            seed: 0,
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

impl TrainConfig {
    pub fn model_dims(&self, input_dim: usize) -> ModelDims {
        ModelDims {
            input: input_dim,
            hidden: self.hidden.clone(),
            proj_hidden: self.proj_hidden,
            embed: self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SscError::Config(format!("train: {msg}")));
        if self.b < 1 || self.mu < 1 {
            return bad(format!(
                "b and mu must be >= 1 (b={}, mu={})",
                self.b, self.mu
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if !(self.t > 0.0 && self.t_prime > 0.0) {
            return bad(format!(
                "temperatures must be positive (t={}, t_prime={})",
                self.t, self.t_prime
            ));
        }
        let lambdas = [
            self.lambda_x,
            self.lambda_conf,
            self.lambda_unconf,
            self.lambda_proto,
            self.self_loss_weight,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("weights must be finite and nonnegative".into());
        }
        if !(self.lr0 >= 0.0 && (0.0..1.0).contains(&self.momentum) && self.weight_decay >= 0.0) {
            return bad(format!(
                "optimizer settings out of range (lr0={}, momentum={}, weight_decay={})",
                self.lr0, self.momentum, self.weight_decay
            ));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be positive".into());
        }
        if self.mode == Mode::FixmatchCe && self.add_self_loss && !self.double_strong_aug {
            return bad("the self-supervised term in fixmatch_ce needs double_strong_aug".into());
        }
        if self.hidden.is_empty()
            || self.hidden.contains(&0)
            || self.proj_hidden == 0
            || self.embed_dim == 0
        {
            return bad("layer widths must be positive and hidden nonempty".into());
        }
        Ok(())
    }
}

/// Rows of the ablation table, from the cross-entropy baseline to full SSC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    /// (1) cross-entropy baseline.
    Base = 1,
    /// (2) baseline with two strong views.
    DoubleAug = 2,
    /// (3) baseline with two strong views and a self-supervised term.
    DoubleAugSelf = 3,
    /// (4) SSC ignoring unconfident anchors.
    SscNoUnconf = 4,
    /// (5) SSC ignoring unconfident anchors plus a separate self-supervised term on them.
    SscNoUnconfSelf = 5,
    /// (6) full SSC.
    Ssc = 6,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Base,
        Preset::DoubleAug,
        Preset::DoubleAugSelf,
        Preset::SscNoUnconf,
        Preset::SscNoUnconfSelf,
        Preset::Ssc,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.number() == n)
    }

    pub fn label(self) -> &'static str {
        match self {
            Preset::Base => "fixmatch_ce",
            Preset::DoubleAug => "fixmatch_ce+double_aug",
            Preset::DoubleAugSelf => "fixmatch_ce+double_aug+self",
            Preset::SscNoUnconf => "ssc(lambda_unconf=0)",
            Preset::SscNoUnconfSelf => "ssc(lambda_unconf=0)+self",
            Preset::Ssc => "ssc",
        }
    }

    /// Overrides the fields this preset controls and keeps everything else.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Preset::Base | Preset::DoubleAug | Preset::DoubleAugSelf => {
                cfg.mode = Mode::FixmatchCe;
                cfg.double_strong_aug = self != Preset::Base;
                cfg.add_self_loss = self == Preset::DoubleAugSelf;
            }
            Preset::SscNoUnconf | Preset::SscNoUnconfSelf => {
                cfg.mode = Mode::Ssc;
                cfg.lambda_unconf = 0.0;
                cfg.add_self_loss = self == Preset::SscNoUnconfSelf;
            }
            Preset::Ssc => {
                cfg.mode = Mode::Ssc;
                cfg.add_self_loss = false;
            }
        }
        cfg
    }
}

impl FromStr for Mode {
    type Err = SscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssc" => Ok(Mode::Ssc),
            "fixmatch_ce" => Ok(Mode::FixmatchCe),
            "supcon_labeled_only" => Ok(Mode::SupconLabeledOnly),
            "ce_labeled_only" => Ok(Mode::CeLabeledOnly),
            other => Err(SscError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.t, c.t_prime, c.tau), (0.01, 0.04, 0.95));
        assert_eq!(
            (c.lambda_x, c.lambda_conf, c.lambda_unconf, c.lambda_proto),
            (1.0, 1.0, 0.2, 1.0)
        );
        assert_eq!(c.mu, 7);
        c.validate().unwrap();
    }

    #[test]
    fn presets_map_to_table_rows() {
        let base = TrainConfig::default();
        let p1 = Preset::Base.apply(&base);
        assert_eq!(p1.mode, Mode::FixmatchCe);
        assert!(!p1.double_strong_aug && !p1.add_self_loss);
        let p2 = Preset::DoubleAug.apply(&base);
        assert!(p2.double_strong_aug && !p2.add_self_loss);
        let p3 = Preset::DoubleAugSelf.apply(&base);
        assert!(p3.double_strong_aug && p3.add_self_loss);
        p3.validate().unwrap();
        let p4 = Preset::SscNoUnconf.apply(&base);
        assert_eq!(
            (p4.mode, p4.lambda_unconf, p4.add_self_loss),
            (Mode::Ssc, 0.0, false)
        );
        let p5 = Preset::SscNoUnconfSelf.apply(&base);
        assert_eq!((p5.lambda_unconf, p5.add_self_loss), (0.0, true));
        let p6 = Preset::Ssc.apply(&base);
        assert_eq!((p6.mode, p6.lambda_unconf), (Mode::Ssc, 0.2));
        for n in 1..=6 {
            assert_eq!(Preset::from_number(n).unwrap().number(), n);
        }
        assert!(Preset::from_number(7).is_none());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = TrainConfig::default();
        c.tau = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda_unconf = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.mode = Mode::FixmatchCe;
        c.add_self_loss = true;
        assert!(c.validate().is_err());
    }
}
