//! Self-training on Gaussian blobs with four labels per class, logging
//! metrics as NDJSON to stdout.
//!
//! Run with `cargo run --release --example train_blobs`.

use std::io::stdout;

use semisupcon::data::{gen_gaussian_blobs, split_semi, AugmentConfig};
use semisupcon::numerics::SeededRng;
use semisupcon::selftrain::NdjsonWriter;
use semisupcon::{run_experiment, Mode, TrainConfig};

fn main() -> semisupcon::Result<()> {
    let rng = SeededRng::new(42);
    let data = gen_gaussian_blobs(4, 16, 300, 0.15, &mut rng.child("data"))?;
    let split = split_semi(&data, 4, 0.2, &mut rng.child("split"))?;
    println!(
        "# {} labeled, {} unlabeled, {} validation",
        split.labeled_y.len(),
        split.unlabeled.rows(),
        split.val_y.len()
    );

    let cfg = TrainConfig {
        mode: Mode::Ssc,
        t: 0.1,
        embed_dim: 32,
        total_steps: 600,
        steps_per_epoch: 200,
        ..TrainConfig::default()
    };
    let mut sink = NdjsonWriter::new(stdout().lock());
    let out = run_experiment(&cfg, &AugmentConfig::from_strength(10), &split, &mut sink)?;
    eprintln!("final accuracy {:.4}", out.final_accuracy);
    Ok(())
}
