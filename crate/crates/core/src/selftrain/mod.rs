//! Online self-training: batch assembly, one optimisation step per mode,
//! evaluation and the end-to-end experiment loop.
//!
//! A training step draws its augmentations from streams keyed by the run
//! seed and the step index, so a run is a pure function of
//! `(seed, config, data)`.

mod config;
mod metrics;
mod optim;

use std::time::Instant;

pub use config::{Mode, Preset, TrainConfig};
pub use metrics::{
    read_ndjson, EventKind, MetricRecord, MetricsSink, NdjsonWriter, NullSink, StepMetrics,
};
pub use optim::{cosine_lr, CyclingLoader, Sgd};

use crate::data::{augment_strong, augment_weak, AugmentConfig, SemiSplit};
use crate::error::{Result, SscError};
use crate::losses::{prototype_cross_entropy, self_loss, ssc_loss, ContrastiveBatch};
use crate::model::{backward, embed, forward, init_params, ForwardTrace, ModelParams, ParamGrads};
use crate::numerics::{argmax, Matrix, SeededRng};
use crate::pseudo::{assign_pseudo_labels, prototype_probabilities, PseudoLabelResult};

/// Raw inputs of one step.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub labeled_x: &'a Matrix,
    pub labeled_y: &'a [usize],
    /// `μB` unlabeled rows; empty for labeled-only modes.
    pub unlabeled: &'a Matrix,
    /// Hidden labels of `unlabeled`, for diagnostics only.
    pub unlabeled_truth: Option<&'a [usize]>,
}

/// Augmented inputs of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub labeled: Matrix,
    pub labeled_y: Vec<usize>,
    pub weak: Matrix,
    /// One or two strong views of the unlabeled rows.
    pub strong: Vec<Matrix>,
    pub truth: Option<Vec<usize>>,
}

impl Views {
    pub fn mu_b(&self) -> usize {
        self.weak.rows()
    }
}

/// Number of strong views a configuration consumes.
pub fn strong_view_count(cfg: &TrainConfig) -> usize {
    match cfg.mode {
        Mode::Ssc => 2,
        Mode::FixmatchCe if cfg.double_strong_aug => 2,
        Mode::FixmatchCe => 1,
        Mode::SupconLabeledOnly | Mode::CeLabeledOnly => 0,
    }
}

/// Applies the weak and strong augmentations with streams keyed by `step`.
pub fn make_views(
    inputs: &BatchInputs<'_>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    step: usize,
    rng: &SeededRng,
) -> Views {
    let step = step as u64;
    let labeled = if cfg.augment_labeled {
        augment_weak(
            inputs.labeled_x,
            aug,
            &mut rng.child_indexed("labeled-weak", step),
        )
    } else {
        inputs.labeled_x.clone()
    };
    let n_strong = if inputs.unlabeled.rows() == 0 {
        0
    } else {
        strong_view_count(cfg)
    };
    let (weak, strong) = if n_strong == 0 {
        (Matrix::zeros(0, inputs.labeled_x.cols()), Vec::new())
    } else {
        let weak = augment_weak(
            inputs.unlabeled,
            aug,
            &mut rng.child_indexed("unlabeled-weak", step),
        );
        let strong = (0..n_strong)
            .map(|v| {
                let mut r = rng.child_indexed(&format!("strong-{v}"), step);
                augment_strong(inputs.unlabeled, aug, &mut r)
            })
            .collect();
        (weak, strong)
    };
    Views {
        labeled,
        labeled_y: inputs.labeled_y.to_vec(),
        weak,
        strong,
        truth: inputs.unlabeled_truth.map(<[usize]>::to_vec),
    }
}

/// The stacked contrastive batch `[Z^x; Z^{s1}; Z^{s2}; Z^c]` with the trace
/// of the forward pass that produced its non-prototype rows.
#[derive(Debug, Clone)]
pub struct AssembledBatch {
    pub batch: ContrastiveBatch,
    pub trace: ForwardTrace,
    /// `None` when the step has no unlabeled rows.
    pub pseudo: Option<PseudoLabelResult>,
    /// Rows produced by the forward pass; prototypes follow them.
    pub forward_rows: usize,
    pub b: usize,
    pub mu_b: usize,
}

/// Pseudo-labels `views.weak` with a forward pass that records nothing, then
/// stacks labeled rows, both strong views and prototypes with per-block
/// anchor weights.
pub fn assemble_ssc_batch(
    params: &ModelParams,
    views: &Views,
    cfg: &TrainConfig,
) -> Result<AssembledBatch> {
    let k = params.k();
    let b = views.labeled.rows();
    let mu_b = views.mu_b();
    if views.labeled_y.len() != b {
        return Err(SscError::InvalidBatch(format!(
            "{b} labeled rows but {} labels",
            views.labeled_y.len()
        )));
    }
    if let Some(&label) = views.labeled_y.iter().find(|&&l| l >= k) {
        return Err(SscError::LabelOutOfRange { label, k });
    }
    let pseudo = if mu_b > 0 {
        if views.strong.len() != 2 {
            return Err(SscError::InvalidBatch(format!(
                "contrastive batches need two strong views, got {}",
                views.strong.len()
            )));
        }
        let z_w = embed(params, &views.weak)?;
        Some(assign_pseudo_labels(
            &z_w,
            &params.prototypes,
            cfg.tau,
            cfg.t_prime,
            k,
        )?)
    } else {
        None
    };

    let mut parts = vec![&views.labeled];
    if mu_b > 0 {
        parts.extend(views.strong.iter());
    }
    let stacked = Matrix::vstack(&parts)?;
    let (z_fwd, trace) = forward(params, &stacked)?;
    let forward_rows = z_fwd.rows();
    let z = Matrix::vstack(&[&z_fwd, &params.prototypes])?;

    let mut y = views.labeled_y.clone();
    let mut lambda = vec![cfg.lambda_x; b];
    if let Some(p) = &pseudo {
        y.extend_from_slice(&p.labels);
        for _ in 0..2 {
            lambda.extend(p.confident.iter().map(|&c| {
                if c {
                    cfg.lambda_conf
                } else {
                    cfg.lambda_unconf
                }
            }));
        }
    }
    y.extend(0..k);
    lambda.extend(std::iter::repeat_n(cfg.lambda_proto, k));
    let n = z.rows();
    let batch = ContrastiveBatch::new(z, y, lambda, vec![true; n])?;
    Ok(AssembledBatch {
        batch,
        trace,
        pseudo,
        forward_rows,
        b,
        mu_b,
    })
}

/// Loss value, parameter gradients and pseudo-labels of one objective evaluation.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub grads: ParamGrads,
    pub pseudo: Option<PseudoLabelResult>,
}

/// SSC loss on the assembled batch (plus, when `add_self_loss` is set, a
/// separate self-supervised term on the unconfident examples' two views).
/// Also serves the labeled-only contrastive mode, whose views carry no
/// unlabeled rows.
pub fn ssc_objective(params: &ModelParams, views: &Views, cfg: &TrainConfig) -> Result<Objective> {
    let assembled = assemble_ssc_batch(params, views, cfg)?;
    let out = ssc_loss(&assembled.batch, cfg.t)?;
    let mut loss = out.value;
    let fwd = assembled.forward_rows;
    let mut grad_fwd = out.grad_z.slice_rows(0, fwd);
    let grad_protos = out.grad_z.slice_rows(fwd, out.grad_z.rows());

    if let (true, Some(p)) = (
        cfg.add_self_loss && cfg.self_loss_weight > 0.0,
        &assembled.pseudo,
    ) {
        let (b, mu_b) = (assembled.b, assembled.mu_b);
        let unconf: Vec<usize> = (0..mu_b).filter(|&i| !p.confident[i]).collect();
        if !unconf.is_empty() {
            let rows: Vec<usize> = unconf
                .iter()
                .map(|&i| b + i)
                .chain(unconf.iter().map(|&i| b + mu_b + i))
                .collect();
            let z_sub = assembled.batch.z.select_rows(&rows);
            let extra = self_loss(&z_sub, unconf.len(), cfg.t)?;
            loss += cfg.self_loss_weight * extra.value;
            scatter_add_rows(&mut grad_fwd, &rows, &extra.grad_z, cfg.self_loss_weight);
        }
    }

    let mut grads = backward(params, &assembled.trace, &grad_fwd)?;
    grads.prototypes = grad_protos;
    Ok(Objective {
        loss,
        grads,
        pseudo: assembled.pseudo,
    })
}

/// Cross-entropy objective with the prototype head at temperature `T'` as
/// classifier: labeled cross-entropy plus, when unlabeled rows are present,
/// thresholded pseudo-label cross-entropy averaged over every strong row.
pub fn fixmatch_objective(
    params: &ModelParams,
    views: &Views,
    cfg: &TrainConfig,
) -> Result<Objective> {
    let k = params.k();
    let b = views.labeled.rows();
    let mu_b = views.mu_b();
    let mut parts = vec![&views.labeled];
    parts.extend(views.strong.iter());
    let stacked = Matrix::vstack(&parts)?;
    let (z_fwd, trace) = forward(params, &stacked)?;

    let z_lab = z_fwd.slice_rows(0, b);
    let sup = prototype_cross_entropy(
        &z_lab,
        &views.labeled_y,
        &vec![true; b],
        &params.prototypes,
        cfg.t_prime,
    )?;
    let mut loss = sup.value;
    let mut grad_fwd = Matrix::zeros(z_fwd.rows(), z_fwd.cols());
    scatter_add_rows(&mut grad_fwd, &(0..b).collect::<Vec<_>>(), &sup.grad_z, 1.0);
    let mut grad_protos = sup.grad_prototypes;

    let pseudo = if mu_b > 0 && !views.strong.is_empty() {
        let z_w = embed(params, &views.weak)?;
        let p = assign_pseudo_labels(&z_w, &params.prototypes, cfg.tau, cfg.t_prime, k)?;
        let n_views = views.strong.len();
        let strong_rows: Vec<usize> = (b..b + n_views * mu_b).collect();
        let z_strong = z_fwd.select_rows(&strong_rows);
        let targets: Vec<usize> = (0..n_views)
            .flat_map(|_| p.hard_labels.iter().copied())
            .collect();
        let mask: Vec<bool> = (0..n_views)
            .flat_map(|_| p.confident.iter().copied())
            .collect();
        let unsup =
            prototype_cross_entropy(&z_strong, &targets, &mask, &params.prototypes, cfg.t_prime)?;
        loss += unsup.value;
        scatter_add_rows(&mut grad_fwd, &strong_rows, &unsup.grad_z, 1.0);
        grad_protos.add_scaled(&unsup.grad_prototypes, 1.0)?;

        if cfg.add_self_loss && cfg.self_loss_weight > 0.0 && n_views == 2 {
            let extra = self_loss(&z_strong, mu_b, cfg.t)?;
            loss += cfg.self_loss_weight * extra.value;
            scatter_add_rows(
                &mut grad_fwd,
                &strong_rows,
                &extra.grad_z,
                cfg.self_loss_weight,
            );
        }
        Some(p)
    } else {
        None
    };

    let mut grads = backward(params, &trace, &grad_fwd)?;
    grads.prototypes = grad_protos;
    Ok(Objective {
        loss,
        grads,
        pseudo,
    })
}

fn scatter_add_rows(dst: &mut Matrix, rows: &[usize], src: &Matrix, factor: f64) {
    for (s, &r) in rows.iter().enumerate() {
        for (d, v) in dst.row_mut(r).iter_mut().zip(src.row(s)) {
            *d += factor * v;
        }
    }
}

/// Objective for the configured mode.
pub fn objective(params: &ModelParams, views: &Views, cfg: &TrainConfig) -> Result<Objective> {
    match cfg.mode {
        Mode::Ssc | Mode::SupconLabeledOnly => ssc_objective(params, views, cfg),
        Mode::FixmatchCe | Mode::CeLabeledOnly => fixmatch_objective(params, views, cfg),
    }
}

fn apply_step(
    params: &mut ModelParams,
    opt: &mut Sgd,
    views: &Views,
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepMetrics> {
    let started = Instant::now();
    let obj = objective(params, views, cfg)?;
    if !obj.loss.is_finite() {
        return Err(SscError::NonFiniteLoss {
            step,
            detail: format!("{} loss evaluated to {}", cfg.mode, obj.loss),
        });
    }
    if obj
        .grads
        .tensors()
        .iter()
        .any(|t| t.iter().any(|v| !v.is_finite()))
    {
        return Err(SscError::NonFiniteLoss {
            step,
            detail: format!("{} loss {} has non-finite gradients", cfg.mode, obj.loss),
        });
    }
    let lr = cosine_lr(step.saturating_sub(1), cfg.total_steps, cfg.lr0);
    opt.step(params, &obj.grads, lr)?;
    let (confident_fraction, pseudo_label_accuracy) = match &obj.pseudo {
        Some(p) => {
            let acc = views.truth.as_ref().map_or(0.0, |truth| {
                let hits = p
                    .hard_labels
                    .iter()
                    .zip(truth)
                    .filter(|(a, b)| a == b)
                    .count();
                hits as f64 / truth.len().max(1) as f64
            });
            (p.confident_fraction(), acc)
        }
        None => (0.0, 0.0),
    };
    Ok(StepMetrics {
        step,
        loss: obj.loss,
        confident_fraction,
        pseudo_label_accuracy,
        lr,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One SSC update: augment, assemble, loss, backward, SGD step and
/// prototype re-projection. `step` is 1-based.
pub fn training_step(
    params: &mut ModelParams,
    opt: &mut Sgd,
    inputs: &BatchInputs<'_>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    step: usize,
    rng: &SeededRng,
) -> Result<StepMetrics> {
    if !matches!(cfg.mode, Mode::Ssc | Mode::SupconLabeledOnly) {
        return Err(SscError::Config(format!(
            "training_step runs contrastive modes, got {}",
            cfg.mode
        )));
    }
    let views = make_views(inputs, cfg, aug, step, rng);
    apply_step(params, opt, &views, cfg, step)
}

/// One cross-entropy baseline update.
pub fn fixmatch_ce_step(
    params: &mut ModelParams,
    opt: &mut Sgd,
    inputs: &BatchInputs<'_>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    step: usize,
    rng: &SeededRng,
) -> Result<StepMetrics> {
    if !matches!(cfg.mode, Mode::FixmatchCe | Mode::CeLabeledOnly) {
        return Err(SscError::Config(format!(
            "fixmatch_ce_step runs cross-entropy modes, got {}",
            cfg.mode
        )));
    }
    let views = make_views(inputs, cfg, aug, step, rng);
    apply_step(params, opt, &views, cfg, step)
}

/// Fraction of rows whose prototype-head argmax equals the label.
pub fn evaluate(params: &ModelParams, x: &Matrix, y: &[usize], cfg: &TrainConfig) -> Result<f64> {
    if x.rows() == 0 || x.rows() != y.len() {
        return Err(SscError::InvalidDataset(format!(
            "evaluation needs a nonempty labeled set, got {} rows and {} labels",
            x.rows(),
            y.len()
        )));
    }
    let z = embed(params, x)?;
    let probs = prototype_probabilities(&z, &params.prototypes, cfg.t_prime)?;
    let hits = probs
        .row_iter()
        .zip(y)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub params: ModelParams,
    pub final_accuracy: f64,
    /// `(step, accuracy)` for every evaluation.
    pub evals: Vec<(usize, f64)>,
}

/// Runs `cfg.total_steps` steps and evaluates every `steps_per_epoch` steps
/// and at the end. Writes an effective-configuration record first.
pub fn run_experiment(
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    split: &SemiSplit,
    sink: &mut dyn MetricsSink,
) -> Result<ExperimentOutcome> {
    run_experiment_with_header(cfg, aug, split, None, sink)
}

/// [`run_experiment`] with a caller-supplied effective-configuration record.
pub fn run_experiment_with_header(
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    split: &SemiSplit,
    header: Option<serde_json::Value>,
    sink: &mut dyn MetricsSink,
) -> Result<ExperimentOutcome> {
    let cfg = resolve_config(cfg, split)?;
    aug.validate()?;
    let header = match header {
        Some(h) => h,
        None => serde_json::json!({
            "train": cfg,
            "augment": aug,
            "split": {
                "labeled": split.labeled_y.len(),
                "unlabeled": split.unlabeled.rows(),
                "val": split.val_y.len(),
                "input_dim": split.input_dim(),
            },
        }),
    };
    sink.record(MetricRecord::config(header))?;

    let result = run_loop(&cfg, aug, split, sink);
    let flushed = sink.flush();
    let outcome = result?;
    flushed?;
    Ok(outcome)
}

/// Validates `cfg` and fills in the class count from the split.
pub fn resolve_config(cfg: &TrainConfig, split: &SemiSplit) -> Result<TrainConfig> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    if cfg.k == 0 {
        cfg.k = split.k;
    } else if cfg.k != split.k {
        return Err(SscError::Config(format!(
            "train.k = {} but the dataset has {} classes",
            cfg.k, split.k
        )));
    }
    if split.labeled_y.is_empty() {
        return Err(SscError::InvalidDataset(
            "split has no labeled examples".into(),
        ));
    }
    if cfg.mode.uses_unlabeled() && split.unlabeled.rows() == 0 {
        return Err(SscError::InvalidDataset(format!(
            "{} needs unlabeled data",
            cfg.mode
        )));
    }
    Ok(cfg)
}

fn run_loop(
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    split: &SemiSplit,
    sink: &mut dyn MetricsSink,
) -> Result<ExperimentOutcome> {
    let root = SeededRng::new(cfg.seed);
    let dims = cfg.model_dims(split.input_dim());
    let mut params = init_params(&dims, cfg.k, &mut root.child("init"))?;
    let mut opt = Sgd::new(&params, cfg.momentum, cfg.weight_decay);
    let mut labeled_loader =
        CyclingLoader::new(split.labeled_y.len(), root.child("labeled-loader"));
    let mut unlabeled_loader =
        CyclingLoader::new(split.unlabeled.rows(), root.child("unlabeled-loader"));
    let step_rng = root.child("steps");
    let with_wall_time = sink.wants_wall_time();
    let mu_b = cfg.mu * cfg.b;

    let mut evals = Vec::new();
    let mut eval_at =
        |params: &ModelParams, step: usize, sink: &mut dyn MetricsSink| -> Result<()> {
            let acc = evaluate(params, &split.val_x, &split.val_y, cfg)?;
            evals.push((step, acc));
            sink.record(MetricRecord::eval(step, acc))
        };

    for step in 1..=cfg.total_steps {
        let lab = labeled_loader.next_batch(cfg.b);
        let labeled_x = split.labeled_x.select_rows(&lab);
        let labeled_y: Vec<usize> = lab.iter().map(|&i| split.labeled_y[i]).collect();
        let (unlabeled, truth) = if cfg.mode.uses_unlabeled() {
            let idx = unlabeled_loader.next_batch(mu_b);
            let truth: Vec<usize> = idx.iter().map(|&i| split.unlabeled_y[i]).collect();
            (split.unlabeled.select_rows(&idx), truth)
        } else {
            (Matrix::zeros(0, split.input_dim()), Vec::new())
        };
        let inputs = BatchInputs {
            labeled_x: &labeled_x,
            labeled_y: &labeled_y,
            unlabeled: &unlabeled,
            unlabeled_truth: Some(&truth),
        };
        let metrics = match cfg.mode {
            Mode::Ssc | Mode::SupconLabeledOnly => {
                training_step(&mut params, &mut opt, &inputs, cfg, aug, step, &step_rng)?
            }
            Mode::FixmatchCe | Mode::CeLabeledOnly => {
                fixmatch_ce_step(&mut params, &mut opt, &inputs, cfg, aug, step, &step_rng)?
            }
        };
        sink.record(metrics.to_record(with_wall_time))?;
        if step % cfg.steps_per_epoch == 0 {
            eval_at(&params, step, sink)?;
        }
    }
    if cfg.total_steps == 0 || !cfg.total_steps.is_multiple_of(cfg.steps_per_epoch) {
        eval_at(&params, cfg.total_steps, sink)?;
    }
    let final_accuracy = evals.last().map_or(0.0, |&(_, a)| a);
    Ok(ExperimentOutcome {
        params,
        final_accuracy,
        evals,
    })
}
