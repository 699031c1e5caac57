//! Semi-supervised contrastive learning with class prototypes.
//!
//! The crate is built around one weighted contrastive loss,
//! [`losses::ssc_loss`], evaluated on a stacked batch of labeled
//! embeddings, two strongly augmented views of unlabeled examples and the
//! `K` learnable class prototypes. Unlabeled rows get pseudo-labels from the
//! prototype softmax of a weak view ([`pseudo::assign_pseudo_labels`]);
//! unconfident rows fall back to a self-supervised pairing of their two
//! views.
//!
//! [`selftrain`] wires this into a small MLP trainer with an SGD optimiser,
//! and [`cli`] exposes training, ablations, sweeps, verification and
//! evaluation from TOML configuration files.

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pseudo;
pub mod selftrain;
pub mod verify;

pub use error::{Result, SscError};
pub use losses::{self_loss, ssc_loss, supcon_loss, ContrastiveBatch, LossOutput};
pub use numerics::{Matrix, SeededRng};
pub use pseudo::{assign_pseudo_labels, PseudoLabelResult};
pub use selftrain::{run_experiment, Mode, Preset, TrainConfig};
