//! Trains a GRAE and a plain autoencoder on a Swiss roll with a held-out
//! middle slice, then compares latent R2 and reconstruction error.

use grae::autoencoder::{fit, TrainConfig, TrainMode};
use grae::datasets::{make_swiss_roll, split, SplitSpec};
use grae::diffusion::DiffusionParams;
use grae::mds::{reference_embed, MdsParams};
use grae::metrics::{r2_for, reconstruction_mse};

fn main() -> grae::Result<()> {
    let seed = 3;
    let ds = make_swiss_roll(1200, seed)?;
    let sp = split(&ds, &SplitSpec::MiddleSlice { slice_count: 100 })?;
    let diffusion = DiffusionParams { t_override: Some(60), ..DiffusionParams::default() };
    let reference = reference_embed(&sp.train.features, &diffusion, &MdsParams::default(), seed)?;

    for mode in [TrainMode::Grae, TrainMode::Vanilla] {
        let cfg = TrainConfig {
            mode,
            seed,
            epochs: 60,
            learning_rate: 1e-3,
            hidden_widths: vec![64, 32],
            ..TrainConfig::default()
        };
        let (net, losses) = fit(&sp.train.features, Some(&reference.embedding), &cfg)?;
        let last = losses.last().unwrap();
        let z = net.encode(&sp.test.features)?;
        let mse = reconstruction_mse(&sp.test.features, &net.reconstruct(&sp.test.features)?)?;
        println!(
            "{:<4} train recon {:.4}  test R2 {:.4}  test MSE {:.4}",
            mode.name(),
            last.reconstruction,
            r2_for(&z, &sp.test)?,
            mse
        );
    }
    Ok(())
}
