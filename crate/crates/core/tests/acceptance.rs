//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//!
//! `SSC_ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.
//! `SSC_ACCEPTANCE_STRICT=1` makes any failed criterion exit non-zero; by
//! default the report is printed and the remaining test targets still run.

use std::process::Command;
use std::time::{Duration, Instant};

use semisupcon::cli::{mean_and_variance, sweep, train, ExperimentConfig, SweepParam};
use semisupcon::data::{read_idx_images, read_idx_labels};
use semisupcon::model::{decode_checkpoint, encode_checkpoint, init_params, load_checkpoint};
use semisupcon::numerics::SeededRng;
use semisupcon::selftrain::{run_experiment, Mode, NullSink, Preset, TrainConfig};
use semisupcon::verify::{
    ce_prototype_equivalence, gradient_model, gradient_ssc, oracle_equivalence,
    pseudo_label_contract, self_loss_identity, VerifyOptions,
};

const FIXTURE: &str = include_str!("../configs/blobs.toml");
/// Step budget of each sweep run.
const SWEEP_STEPS: usize = 1000;

struct Line {
    id: u8,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn fixture() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(FIXTURE).expect("fixture config parses")
}

/// Final accuracies of `train` for every seed, with the longest single run.
fn accuracies(cfg: &ExperimentConfig, train: &TrainConfig, seeds: &[u64]) -> (Vec<f64>, Duration) {
    let split = cfg.build_split().expect("fixture split");
    let aug = cfg.augment.resolve().expect("augment");
    let mut longest = Duration::ZERO;
    let accs = seeds
        .iter()
        .map(|&seed| {
            let t = TrainConfig {
                seed,
                ..train.clone()
            };
            let start = Instant::now();
            let out = run_experiment(&t, &aug, &split, &mut NullSink).expect("run finishes");
            longest = longest.max(start.elapsed());
            out.final_accuracy
        })
        .collect();
    (accs, longest)
}

fn mean(v: &[f64]) -> f64 {
    mean_and_variance(v).0
}

fn fmt_accs(v: &[f64]) -> String {
    v.iter()
        .map(|a| format!("{a:.4}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn criterion_1() -> (bool, String) {
    let t = Instant::now();
    let r = oracle_equivalence(100, 101);
    let secs = t.elapsed().as_secs_f64();
    (
        r.passed && secs < 10.0,
        format!(
            "max |diff| {:.2e} over 100 batches in {secs:.2}s",
            r.max_error
        ),
    )
}

fn criterion_2() -> (bool, String) {
    let t = Instant::now();
    let r = ce_prototype_equivalence(100, 102);
    let secs = t.elapsed().as_secs_f64();
    (
        r.passed && secs < 10.0,
        format!(
            "max |diff| {:.2e} over 100 batches in {secs:.2}s",
            r.max_error
        ),
    )
}

fn criterion_3() -> (bool, String) {
    let r = self_loss_identity(100, 103);
    (
        r.passed,
        format!("max |diff| {:.2e} over 100 cases", r.max_error),
    )
}

fn criterion_4() -> (bool, String) {
    let t = Instant::now();
    let a = gradient_ssc(12, 104, VerifyOptions::default());
    let b = gradient_model(12, 105, VerifyOptions::default());
    let secs = t.elapsed().as_secs_f64();
    (
        a.passed && b.passed && secs < 60.0,
        format!(
            "loss rows max rel err {:.2e}, model max rel err {:.2e}, 12+12 instances in {secs:.2}s",
            a.max_error, b.max_error
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let r = pseudo_label_contract(500, 106);
    (
        r.passed,
        format!(
            "{} violations over {} randomized cases",
            r.max_error, r.cases
        ),
    )
}

struct Learning {
    ssc: Vec<f64>,
    baseline: Vec<f64>,
    longest: Duration,
}

fn learning(cfg: &ExperimentConfig) -> Learning {
    let seeds = cfg.train.ablation_seeds.clone();
    let (ssc, t1) = accuracies(cfg, &Preset::Ssc.apply(&cfg.train), &seeds);
    let labeled_only = TrainConfig {
        mode: Mode::SupconLabeledOnly,
        ..cfg.train.clone()
    };
    let (baseline, t2) = accuracies(cfg, &labeled_only, &seeds);
    Learning {
        ssc,
        baseline,
        longest: t1.max(t2),
    }
}

fn criterion_6(l: &Learning) -> (bool, String) {
    let (s, b) = (mean(&l.ssc), mean(&l.baseline));
    let per_seed = l.longest.as_secs_f64();
    let passed = s >= 0.95 && s - b >= 0.05 && per_seed < 600.0;
    (
        passed,
        format!(
            "ssc mean {s:.4} [{}] (>= 0.95: {}), labeled-only supcon mean {b:.4} [{}], gap {:+.4} (>= 0.05: {}), slowest seed {per_seed:.1}s",
            fmt_accs(&l.ssc),
            s >= 0.95,
            fmt_accs(&l.baseline),
            s - b,
            s - b >= 0.05
        ),
    )
}

fn criterion_7(cfg: &ExperimentConfig, l: &Learning) -> (bool, String) {
    let seeds = cfg.train.ablation_seeds.clone();
    let (p4, _) = accuracies(cfg, &Preset::SscNoUnconf.apply(&cfg.train), &seeds);
    let (p1, _) = accuracies(cfg, &Preset::Base.apply(&cfg.train), &seeds);
    let p6 = mean(&l.ssc);
    (
        p6 >= mean(&p4) && p6 >= mean(&p1),
        format!(
            "preset6 {p6:.4}, preset4 {:.4} [{}], preset1 {:.4} [{}]",
            mean(&p4),
            fmt_accs(&p4),
            mean(&p1),
            fmt_accs(&p1)
        ),
    )
}

fn criterion_8(cfg: &ExperimentConfig) -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    let taus: Vec<f64> = (0..10).map(|i| 0.9 + 0.08 * i as f64 / 9.0).collect();
    let mus: Vec<f64> = (3..=12).map(f64::from).collect();
    let mut detail = Vec::new();
    let mut passed = true;
    for (param, values) in [(SweepParam::Tau, &taus), (SweepParam::Mu, &mus)] {
        let mut variances = Vec::new();
        for preset in [Preset::Ssc, Preset::Base] {
            let mut c = cfg.clone();
            c.train = preset.apply(&c.train);
            c.train.total_steps = SWEEP_STEPS;
            let out = dir.path().join(format!("{param}_{}", preset.number()));
            let points = sweep(&c, &out, param, values).expect("sweep runs");
            let accs: Vec<f64> = points.iter().map(|p| p.final_accuracy).collect();
            variances.push((mean_and_variance(&accs).1, accs));
        }
        let ok = variances[0].0 <= variances[1].0;
        passed &= ok;
        detail.push(format!(
            "{param}: var ssc {:.3e} [{}] vs fixmatch_ce {:.3e} [{}] ({})",
            variances[0].0,
            fmt_accs(&variances[0].1),
            variances[1].0,
            fmt_accs(&variances[1].1),
            if ok { "ok" } else { "violated" }
        ));
    }
    (passed, detail.join("; "))
}

fn idx_fixture_parses() -> bool {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend_from_slice(&[0, 255, 128, 64, 1, 2, 3, 4]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
    let Ok(x) = read_idx_images(&images) else {
        return false;
    };
    let expected: Vec<f64> = [0u8, 255, 128, 64, 1, 2, 3, 4]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    x.shape() == (2, 4)
        && x.data() == expected.as_slice()
        && read_idx_labels(&labels).ok() == Some(vec![3, 7])
}

fn criterion_9(cfg: &ExperimentConfig) -> (bool, String) {
    let mut short = cfg.clone();
    short.train.total_steps = 150;
    short.train.steps_per_epoch = 50;
    let a = tempfile::tempdir().expect("temp dir");
    let b = tempfile::tempdir().expect("temp dir");
    let ra = train(&short, a.path()).expect("train a");
    let rb = train(&short, b.path()).expect("train b");
    let read = |p: &std::path::Path| std::fs::read(p).expect("readable");
    let metrics_same = read(&ra.metrics_path) == read(&rb.metrics_path);
    let ckpt_same = read(&ra.checkpoint_path) == read(&rb.checkpoint_path);

    let bytes = read(&ra.checkpoint_path);
    let loaded = load_checkpoint(&ra.checkpoint_path).expect("checkpoint loads");
    let file_roundtrip = encode_checkpoint(&loaded) == bytes;
    let p = init_params(&short.train.model_dims(16), 4, &mut SeededRng::new(9)).expect("init");
    let decoded = decode_checkpoint(&encode_checkpoint(&p)).expect("decodes");
    let bit_exact = decoded
        .tensors()
        .iter()
        .zip(p.tensors())
        .all(|((_, x), (_, y))| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));

    let idx = idx_fixture_parses();
    let status = Command::new(env!("CARGO_BIN_EXE_ssc"))
        .arg("verify")
        .output()
        .expect("ssc binary runs");
    let verify_ok = status.status.code() == Some(0);
    (
        metrics_same && ckpt_same && file_roundtrip && bit_exact && idx && verify_ok,
        format!(
            "metrics identical {metrics_same}, checkpoints identical {ckpt_same}, checkpoint round-trip {}, idx exact {idx}, `ssc verify` exit {:?}",
            file_roundtrip && bit_exact,
            status.status.code()
        ),
    )
}

fn main() {
    let only: Option<Vec<u8>> = std::env::var("SSC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));
    let cfg = fixture();
    let mut lines: Vec<Line> = Vec::new();
    let mut run = |id: u8, f: &mut dyn FnMut() -> (bool, String)| {
        if !wanted(id) {
            return;
        }
        let t = Instant::now();
        let (passed, detail) = f();
        let line = Line {
            id,
            passed,
            detail,
            elapsed: t.elapsed(),
        };
        println!(
            "criterion {} {} ({:.1}s): {}",
            line.id,
            if line.passed { "PASS" } else { "FAIL" },
            line.elapsed.as_secs_f64(),
            line.detail
        );
        lines.push(line);
    };

    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    run(3, &mut criterion_3);
    run(4, &mut criterion_4);
    run(5, &mut criterion_5);
    // criterion 7 reuses the preset 6 runs of criterion 6
    let mut shared: Option<Learning> = None;
    run(6, &mut || {
        criterion_6(shared.get_or_insert_with(|| learning(&cfg)))
    });
    run(7, &mut || {
        criterion_7(&cfg, shared.get_or_insert_with(|| learning(&cfg)))
    });
    run(8, &mut || criterion_8(&cfg));
    run(9, &mut || criterion_9(&cfg));

    let failed: Vec<u8> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        lines.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    let strict = std::env::var("SSC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
