//! Builds the diffusion operator for a Swiss roll and prints the entropy
//! curve with the diffusion time chosen by each knee rule.

use grae::datasets::make_swiss_roll;
use grae::diffusion::{build_diffusion_model, DiffusionParams, KneeStrategy};

fn main() -> grae::Result<()> {
    let ds = make_swiss_roll(600, 1)?;
    for knee in [KneeStrategy::SecondDifference, KneeStrategy::TwoLine] {
        let params = DiffusionParams { knee, ..DiffusionParams::default() };
        let m = build_diffusion_model(&ds.features, &params)?;
        println!("{knee:?}: t = {}", m.t);
        if knee == KneeStrategy::SecondDifference {
            for (i, h) in m.vne_curve.iter().enumerate().take(20) {
                println!("  t={:<3} entropy {h:.4}", i + 1);
            }
            println!("  top eigenvalues {:.4?}", &m.spectrum[..5]);
        }
    }
    Ok(())
}
