//! The six ablation presets on a small two-moons problem, one seed each.
//!
//! Run with `cargo run --release --example ablation`.

use semisupcon::data::{gen_two_moons, split_semi, AugmentConfig};
use semisupcon::numerics::SeededRng;
use semisupcon::selftrain::NullSink;
use semisupcon::{run_experiment, Preset, TrainConfig};

fn main() -> semisupcon::Result<()> {
    let mut rng = SeededRng::new(1);
    let data = gen_two_moons(800, 0.08, &mut rng)?;
    let split = split_semi(&data, 2, 0.25, &mut rng)?;
    let base = TrainConfig {
        t: 0.1,
        hidden: vec![64, 64],
        embed_dim: 32,
        total_steps: 800,
        steps_per_epoch: 400,
        ..TrainConfig::default()
    };
    let aug = AugmentConfig::from_strength(4);
    for preset in Preset::ALL {
        let out = run_experiment(&preset.apply(&base), &aug, &split, &mut NullSink)?;
        println!(
            "{}  {:<28} {:.4}",
            preset.number(),
            preset.label(),
            out.final_accuracy
        );
    }
    Ok(())
}
