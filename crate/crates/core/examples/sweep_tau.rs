//! Sweeps the confidence threshold for SSC and the cross-entropy baseline
//! through the same entry point as `ssc sweep`, writing tables to a
//! temporary directory.
//!
//! Run with `cargo run --release --example sweep_tau`.

use semisupcon::cli::{mean_and_variance, sweep, ExperimentConfig, SweepParam};
use semisupcon::Preset;

const CONFIG: &str = r#"
[dataset]
kind = "blobs"
k = 3
input_dim = 8
n_per_class = 150
spread = 0.2
seed = 5

[split]
labels_per_class = 3

[train]
t = 0.1
embed_dim = 32
total_steps = 300
steps_per_epoch = 150
"#;

fn main() -> semisupcon::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    let out = std::env::temp_dir().join("ssc_sweep_example");
    let taus = [0.6, 0.8, 0.9, 0.95, 0.99];
    for preset in [Preset::Ssc, Preset::Base] {
        let mut c = cfg.clone();
        c.train = preset.apply(&c.train);
        let points = sweep(&c, &out.join(preset.label()), SweepParam::Tau, &taus)?;
        let accs: Vec<f64> = points.iter().map(|p| p.final_accuracy).collect();
        let (mean, var) = mean_and_variance(&accs);
        println!(
            "{:<12} {:?}  mean {mean:.4} var {var:.2e}",
            preset.label(),
            accs
        );
    }
    println!("tables under {}", out.display());
    Ok(())
}
