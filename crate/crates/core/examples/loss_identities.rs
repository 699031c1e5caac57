//! The contrastive loss and the special cases it reduces to.
//!
//! Run with `cargo run --example loss_identities`.

use semisupcon::losses::{
    anchored_prototype_supcon, ce_prototype_loss, self_loss, sibling_view_labels,
};
use semisupcon::numerics::SeededRng;
use semisupcon::verify::unit_rows;
use semisupcon::{ssc_loss, supcon_loss, ContrastiveBatch};

fn main() -> semisupcon::Result<()> {
    let mut rng = SeededRng::new(11);
    let z = unit_rows(8, 5, &mut rng);
    let y = vec![0, 0, 1, 1, 2, 2, 0, 1];

    // unit weights on every anchor give plain SupCon
    let weighted = ssc_loss(&ContrastiveBatch::unweighted(z.clone(), y.clone())?, 0.1)?;
    let supcon = supcon_loss(&z, &y, 0.1)?;
    println!("ssc (unit weights) {:.12}", weighted.value);
    println!("supcon             {:.12}", supcon.value);

    // scaling one anchor's weight scales its term only
    let mut lambda = vec![1.0; 8];
    lambda[7] = 0.2;
    let down = ssc_loss(
        &ContrastiveBatch::new(z.clone(), y.clone(), lambda, vec![true; 8])?,
        0.1,
    )?;
    println!("with row 7 at 0.2  {:.12}", down.value);

    // a prototype classifier is SSC with the prototypes as the only other rows
    let protos = unit_rows(3, 5, &mut rng);
    let ce = ce_prototype_loss(&z, &y, &protos)?;
    let anchored = anchored_prototype_supcon(&z, &y, &protos, 1.0)?;
    println!("prototype ce       {:.12}", ce.value);
    println!(
        "anchored ssc       {:.12}  |diff| {:.1e}",
        anchored,
        (ce.value - anchored).abs()
    );

    // two views of four samples: each row's positive is its sibling
    let views = unit_rows(8, 5, &mut rng);
    let s = self_loss(&views, 4, 0.1)?;
    let labels = sibling_view_labels(4);
    let direct = supcon_loss(&views, &labels, 0.1)?;
    println!(
        "self loss          {:.12}  |diff| {:.1e}",
        s.value,
        (s.value - direct.value).abs()
    );
    Ok(())
}
