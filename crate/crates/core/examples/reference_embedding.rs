//! Reference embedding of a Swiss roll (diffusion potential + MDS),
//! scored against the unrolled coordinate and written as an SVG scatter.

use grae::datasets::make_swiss_roll;
use grae::diffusion::{DiffusionParams, KneeStrategy};
use grae::mds::{reference_embed, MdsParams};
use grae::metrics::r2_for;
use grae::plot::emit_scatter;

fn main() -> grae::Result<()> {
    let ds = make_swiss_roll(800, 2)?;
    let diffusion = DiffusionParams { knee: KneeStrategy::TwoLine, ..DiffusionParams::default() };
    let r = reference_embed(&ds.features, &diffusion, &MdsParams::default(), 2)?;
    println!("diffusion time {}", r.model.t);
    println!(
        "stress {:.4} -> {:.4} in {} iterations",
        r.stress_history[0],
        r.stress_history.last().unwrap(),
        r.stress_history.len() - 1
    );
    println!("linear R2 against factors {:.4}", r2_for(&r.embedding.coords, &ds)?);
    emit_scatter(&r.embedding.coords, &ds.factors.column(0), None, "reference.svg".as_ref())?;
    println!("wrote reference.svg");
    Ok(())
}
