//! Command-line front end: `train`, `ablate`, `sweep`, `verify` and `eval`.
//!
//! Every command takes an [`ExperimentConfig`] file except `verify`. Results
//! go to `[output].dir`, or to `$SSC_OUTPUT_DIR` when it is set. Exit codes:
//! 0 on success, 1 when a run or a verification suite fails, 2 for unusable
//! input (bad arguments, unreadable or invalid configuration).

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

pub use config::{
    AugmentSection, DatasetConfig, ExperimentConfig, OutputConfig, SplitConfig, OUTPUT_DIR_ENV,
};

use crate::data::SemiSplit;
use crate::error::{Result, SscError};
use crate::model::{load_checkpoint_matching, save_checkpoint};
use crate::selftrain::{
    evaluate, resolve_config, run_experiment_with_header, ExperimentOutcome, NdjsonWriter, Preset,
    TrainConfig,
};
use crate::verify::{run_all, SuiteReport, VerifyOptions};

#[derive(Debug, Parser)]
#[command(
    name = "ssc",
    version,
    about = "Semi-supervised contrastive training with class prototypes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics and a checkpoint.
    Train { config: PathBuf },
    /// Run the six ablation presets over `train.ablation_seeds`.
    Ablate { config: PathBuf },
    /// Train once per value of one hyperparameter.
    Sweep {
        config: PathBuf,
        /// tau, mu, strength, t, t_prime or lambda_unconf.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Run the numerical verification suites.
    Verify,
    /// Evaluate a checkpoint on the configured validation split.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &SscError) -> i32 {
    match e {
        SscError::Config(_) | SscError::UnknownParameter(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        // an unreadable config file is a usage problem, not a run failure
        SscError::Io { path, source } => {
            SscError::Config(format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    })
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train { config } => {
            let cfg = load(&config)?;
            let report = train(&cfg, &cfg.output_dir())?;
            println!("final_accuracy {:.4}", report.final_accuracy);
            println!("metrics {}", report.metrics_path.display());
            println!("checkpoint {}", report.checkpoint_path.display());
        }
        Command::Ablate { config } => {
            let cfg = load(&config)?;
            let rows = ablate(&cfg, &cfg.output_dir())?;
            println!("{:<6} {:<30} {:>8} {:>8}", "preset", "label", "mean", "std");
            for r in &rows {
                println!(
                    "{:<6} {:<30} {:>8.4} {:>8.4}",
                    r.preset.number(),
                    r.preset.label(),
                    r.mean,
                    r.std
                );
            }
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = load(&config)?;
            let param: SweepParam = param.parse()?;
            let values = values
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| SscError::Config(format!("sweep value `{v}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            for point in sweep(&cfg, &cfg.output_dir(), param, &values)? {
                println!(
                    "{param}={} final_accuracy {:.4}",
                    point.value, point.final_accuracy
                );
            }
        }
        Command::Verify => {
            let reports = verify(VerifyOptions::default());
            for r in &reports {
                println!("{r}");
            }
            if !reports.iter().all(|r| r.passed) {
                return Ok(EXIT_FAILURE);
            }
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load(&config)?;
            println!("accuracy {:.4}", eval(&cfg, &checkpoint)?);
        }
    }
    Ok(EXIT_OK)
}

/// Files written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_accuracy: f64,
    pub evals: Vec<(usize, f64)>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Runs `train` with a metrics file at `metrics_path`.
pub fn run_to_file(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    split: &SemiSplit,
    metrics_path: &Path,
) -> Result<ExperimentOutcome> {
    let resolved = resolve_config(train, split)?;
    let header = cfg.effective(&resolved, split)?;
    let aug = cfg.augment.resolve()?;
    if let Some(parent) = metrics_path.parent() {
        fs::create_dir_all(parent).map_err(|e| SscError::io(parent, e))?;
    }
    let file = File::create(metrics_path).map_err(|e| SscError::io(metrics_path, e))?;
    let mut sink =
        NdjsonWriter::new(BufWriter::new(file)).with_wall_time(cfg.output.record_wall_time);
    run_experiment_with_header(&resolved, &aug, split, Some(header), &mut sink)
}

pub fn train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainReport> {
    let split = cfg.build_split()?;
    let metrics_path = out_dir.join(&cfg.output.metrics_file);
    let outcome = run_to_file(cfg, &cfg.train, &split, &metrics_path)?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&outcome.params, &checkpoint_path)?;
    Ok(TrainReport {
        final_accuracy: outcome.final_accuracy,
        evals: outcome.evals,
        metrics_path,
        checkpoint_path,
    })
}

/// Final accuracies of one preset across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

/// Mean and sample variance (`n - 1` denominator; 0 below two values).
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// Runs every preset for every ablation seed (in parallel) and writes
/// `ablation.csv`. The dataset and split stay fixed; only the training seed varies.
pub fn ablate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    ablate_presets(cfg, out_dir, &Preset::ALL)
}

pub fn ablate_presets(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    presets: &[Preset],
) -> Result<Vec<AblationRow>> {
    let split = cfg.build_split()?;
    let seeds = cfg.train.ablation_seeds.clone();
    if seeds.is_empty() {
        return Err(SscError::Config("train.ablation_seeds is empty".into()));
    }
    let jobs: Vec<(Preset, u64)> = presets
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let accs = jobs
        .par_iter()
        .map(|&(preset, seed)| {
            let mut train = preset.apply(&cfg.train);
            train.seed = seed;
            let path = out_dir
                .join("ablate")
                .join(format!("preset{}_seed{seed}.ndjson", preset.number()));
            run_to_file(cfg, &train, &split, &path).map(|o| o.final_accuracy)
        })
        .collect::<Result<Vec<f64>>>()?;

    let rows: Vec<AblationRow> = presets
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(&preset, a)| {
            let (mean, var) = mean_and_variance(a);
            AblationRow {
                preset,
                seeds: seeds.clone(),
                accuracies: a.to_vec(),
                mean,
                std: var.sqrt(),
            }
        })
        .collect();

    let path = out_dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["preset", "label", "mean", "std", "accuracies"])
        .map_err(|e| csv_io(&path, e))?;
    for r in &rows {
        let accs: Vec<String> = r.accuracies.iter().map(|a| a.to_string()).collect();
        w.write_record([
            r.preset.number().to_string(),
            r.preset.label().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            accs.join(" "),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| SscError::io(&path, e))?;
    Ok(rows)
}

fn csv_io(path: &Path, e: csv::Error) -> SscError {
    SscError::io(path, std::io::Error::other(e.to_string()))
}

/// Hyperparameters `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Mu,
    Strength,
    T,
    TPrime,
    LambdaUnconf,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Tau,
        SweepParam::Mu,
        SweepParam::Strength,
        SweepParam::T,
        SweepParam::TPrime,
        SweepParam::LambdaUnconf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Mu => "mu",
            SweepParam::Strength => "strength",
            SweepParam::T => "t",
            SweepParam::TPrime => "t_prime",
            SweepParam::LambdaUnconf => "lambda_unconf",
        }
    }

    /// Writes `value` into the configuration after range checks.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        let bad = |range: &str| {
            Err(SscError::Config(format!(
                "{} = {value} outside {range}",
                self.name()
            )))
        };
        let integral = value.fract() == 0.0 && value.is_finite();
        match self {
            SweepParam::Tau if value > 0.0 && value < 1.0 => cfg.train.tau = value,
            SweepParam::Tau => return bad("(0, 1)"),
            SweepParam::Mu if integral && (1.0..=1024.0).contains(&value) => {
                cfg.train.mu = value as usize
            }
            SweepParam::Mu => return bad("integers 1..=1024"),
            SweepParam::Strength if integral && (0.0..=100.0).contains(&value) => {
                cfg.augment.strength = Some(value as u32)
            }
            SweepParam::Strength => return bad("integers 0..=100"),
            SweepParam::T if value > 0.0 && value.is_finite() => cfg.train.t = value,
            SweepParam::TPrime if value > 0.0 && value.is_finite() => cfg.train.t_prime = value,
            SweepParam::T | SweepParam::TPrime => return bad("(0, inf)"),
            SweepParam::LambdaUnconf if value >= 0.0 && value.is_finite() => {
                cfg.train.lambda_unconf = value
            }
            SweepParam::LambdaUnconf => return bad("[0, inf)"),
        }
        Ok(())
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = SscError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SscError::UnknownParameter(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub final_accuracy: f64,
}

/// One run per value, in parallel, each with its own metrics file; writes
/// `sweep_<param>.csv`. All values are validated before any run starts.
pub fn sweep(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(SscError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = cfg.build_split()?;
    let points = configs
        .par_iter()
        .zip(values)
        .map(|(c, &value)| {
            let path = out_dir
                .join(format!("sweep_{param}"))
                .join(format!("{param}_{value}.ndjson"));
            run_to_file(c, &c.train, &split, &path).map(|o| SweepPoint {
                value,
                final_accuracy: o.final_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let path = out_dir.join(format!("sweep_{param}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["param", "value", "final_accuracy"])
        .map_err(|e| csv_io(&path, e))?;
    for p in &points {
        w.write_record([
            param.name().to_string(),
            p.value.to_string(),
            p.final_accuracy.to_string(),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| SscError::io(&path, e))?;
    Ok(points)
}

pub fn verify(opts: VerifyOptions) -> Vec<SuiteReport> {
    run_all(opts)
}

/// Accuracy of a saved model on the configured validation split.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<f64> {
    let split = cfg.build_split()?;
    let train = resolve_config(&cfg.train, &split)?;
    let params =
        load_checkpoint_matching(checkpoint, &train.model_dims(split.input_dim()), train.k)?;
    evaluate(&params, &split.val_x, &split.val_y, &train)
}
