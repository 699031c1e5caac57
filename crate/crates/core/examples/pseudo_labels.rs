//! Thresholded pseudo-labels from prototype similarities, and how the
//! threshold and head temperature control how many rows are kept.
//!
//! Run with `cargo run --example pseudo_labels`.

use semisupcon::assign_pseudo_labels;
use semisupcon::numerics::SeededRng;
use semisupcon::verify::unit_rows;

fn main() -> semisupcon::Result<()> {
    let mut rng = SeededRng::new(3);
    let k = 4;
    let protos = unit_rows(k, 8, &mut rng);
    let z = unit_rows(6, 8, &mut rng);

    let r = assign_pseudo_labels(&z, &protos, 0.95, 0.04, k)?;
    println!("row  argmax  max_p   confident  labels(view1, view2)");
    for i in 0..z.rows() {
        let p = r.probabilities.row(i);
        let max_p = p.iter().copied().fold(0.0, f64::max);
        println!(
            "{i:>3}  {:>6}  {max_p:.3}  {:>9}  ({}, {})",
            r.hard_labels[i],
            r.confident[i],
            r.labels[i],
            r.labels[i + z.rows()]
        );
    }
    println!("unconfident rows get a fresh label shared only by their two views (>= {k})");

    let many = unit_rows(500, 8, &mut rng);
    println!("\nconfident fraction over 500 random rows");
    println!("t_prime  tau=0.5  tau=0.8  tau=0.95");
    for t_prime in [0.02, 0.04, 0.1, 0.3] {
        let fr: Vec<String> = [0.5, 0.8, 0.95]
            .iter()
            .map(|&tau| {
                assign_pseudo_labels(&many, &protos, tau, t_prime, k)
                    .map(|r| format!("{:>7.3}", r.confident_fraction()))
            })
            .collect::<semisupcon::Result<_>>()?;
        println!("{t_prime:>7}  {}", fr.join("  "));
    }
    Ok(())
}
