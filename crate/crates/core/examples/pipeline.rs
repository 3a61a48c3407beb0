//! Runs the full pipeline from a config string: generate, embed, train,
//! evaluate and plot, then prints the aggregate table.

use std::path::Path;

use grae::config::PipelineConfig;
use grae::pipeline::{Pipeline, Stage};

const CONFIG: &str = "\
dataset.name = swiss_roll
dataset.n = 600
split.kind = middle_slice
split.slice_count = 50
diffusion.knee = two_line
train.epochs = 30
train.learning_rate = 1e-3
train.hidden_widths = 64, 32
run.out = pipeline_out
run.seeds = 0, 1
";

fn main() -> grae::Result<()> {
    let cfg = PipelineConfig::parse(CONFIG, Path::new("."))?;
    let p = Pipeline::new(cfg, false);
    p.execute(&Stage::FULL)?;
    print!("{}", std::fs::read_to_string(p.out_dir().join("aggregate.csv"))?);
    Ok(())
}
