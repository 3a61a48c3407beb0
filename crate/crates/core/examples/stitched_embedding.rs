//! Embeds a large Swiss roll in anchor-sharing batches, stitches the
//! batches together and compares against the single-shot embedding.

use std::time::Instant;

use grae::datasets::make_swiss_roll;
use grae::diffusion::DiffusionParams;
use grae::mds::{reference_embed, MdsParams};
use grae::stitch::{default_anchor_count, diameter, embed_batches, make_plan, procrustes, stitch_with_report};

fn main() -> grae::Result<()> {
    let seed = 4;
    let x = make_swiss_roll(2000, seed)?.features;
    let diffusion = DiffusionParams { t_override: Some(60), ..DiffusionParams::default() };
    let mds = MdsParams::default();

    let t0 = Instant::now();
    let full = reference_embed(&x, &diffusion, &mds, seed)?.embedding;
    println!("single shot: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let plan = make_plan(x.rows(), 600, default_anchor_count(x.rows()), seed)?;
    let batches = embed_batches(&x, &plan, &diffusion, &mds, seed)?;
    let (stitched, report) = stitch_with_report(&plan, &batches, 0.05)?;
    println!("{} batches: {:.1}s", plan.batch_count(), t0.elapsed().as_secs_f64());
    for (k, r) in report.anchor_residuals.iter().enumerate() {
        println!("  batch {k} anchor residual {r:.4}");
    }

    let tf = procrustes(&stitched.coords, &full.coords)?;
    println!(
        "rms gap to single shot after alignment: {:.2}% of diameter",
        100.0 * tf.residual(&stitched.coords, &full.coords)? / diameter(&full.coords)
    );
    Ok(())
}
