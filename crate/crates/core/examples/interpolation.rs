//! Decodes a straight line between two latent codes of a trained GRAE and
//! prints how far each decoded frame is from the nearest real frame.

use grae::autoencoder::{fit, interpolate_path, TrainConfig};
use grae::datasets::make_rotating_object;
use grae::diffusion::{DiffusionParams, KneeStrategy};
use grae::matrix::sq_dist;
use grae::mds::{reference_embed, MdsParams};

fn main() -> grae::Result<()> {
    let ds = make_rotating_object(120, 12, 1, 8)?;
    let diffusion = DiffusionParams { knee: KneeStrategy::TwoLine, ..DiffusionParams::default() };
    let reference = reference_embed(&ds.features, &diffusion, &MdsParams::default(), 8)?;
    let cfg = TrainConfig {
        seed: 8,
        epochs: 80,
        learning_rate: 1e-3,
        batch_size: 16,
        hidden_widths: vec![128, 64],
        ..TrainConfig::default()
    };
    let (net, _) = fit(&ds.features, Some(&reference.embedding), &cfg)?;
    let z = net.encode(&ds.features)?;
    let path = interpolate_path(&net, z.row(10), z.row(20), 6)?;
    let dim = ds.features.cols() as f64;
    for (s, frame) in path.row_iter().enumerate() {
        let (best, err) = (0..ds.len())
            .map(|i| (i, sq_dist(frame, ds.features.row(i)) / dim))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        println!("step {s}: nearest frame {best:<3} mse {err:.4}");
    }
    Ok(())
}
