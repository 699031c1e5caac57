//! Writes a tiny IDX dataset, trains on it, saves a checkpoint and
//! evaluates the reloaded model.
//!
//! Run with `cargo run --release --example idx_checkpoint`.

use semisupcon::data::{gen_gaussian_blobs, load_idx, split_semi, write_idx, AugmentConfig};
use semisupcon::model::{load_checkpoint, save_checkpoint};
use semisupcon::numerics::SeededRng;
use semisupcon::selftrain::{evaluate, resolve_config, NullSink};
use semisupcon::{run_experiment, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("ssc_idx_example");
    std::fs::create_dir_all(&dir)?;
    let (images, labels) = (dir.join("images.idx"), dir.join("labels.idx"));

    // 4x4 "images" with pixels quantized to bytes on disk
    let mut rng = SeededRng::new(8);
    let mut blobs = gen_gaussian_blobs(3, 16, 120, 0.1, &mut rng)?;
    for v in blobs.features.data_mut() {
        *v = (0.5 + 0.5 * *v).clamp(0.0, 1.0);
    }
    write_idx(&images, &labels, &blobs.features, &blobs.labels, 4, 4)?;
    let data = load_idx(&images, &labels)?;
    println!(
        "loaded {} images of {} pixels, {} classes",
        data.len(),
        data.input_dim(),
        data.k
    );

    let split = split_semi(&data, 3, 0.25, &mut rng)?;
    let cfg = TrainConfig {
        t: 0.1,
        embed_dim: 16,
        total_steps: 300,
        steps_per_epoch: 100,
        ..TrainConfig::default()
    };
    let out = run_experiment(
        &cfg,
        &AugmentConfig::from_strength(4),
        &split,
        &mut NullSink,
    )?;
    let ckpt = dir.join("model.bin");
    save_checkpoint(&out.params, &ckpt)?;

    let reloaded = load_checkpoint(&ckpt)?;
    let resolved = resolve_config(&cfg, &split)?;
    let acc = evaluate(&reloaded, &split.val_x, &split.val_y, &resolved)?;
    println!(
        "trained {:.4}, reloaded {acc:.4}, identical params {}",
        out.final_accuracy,
        reloaded == out.params
    );
    Ok(())
}
