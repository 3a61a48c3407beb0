//! End-to-end experiment runner over a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! out/
//!   config.txt            effective configuration
//!   manifest.json         completed stages, completeness flag, last error
//!   metrics.jsonl         one report per (seed, model)
//!   aggregate.csv         mean/std over seeds
//!   seed_<s>/
//!     data/               features.csv, factors.csv, labels.csv, split.csv, meta.json
//!     reference/          embedding.csv, meta.json, optional intermediates
//!     stitch/             plan.txt, batch_###.csv (stitched runs only)
//!     models/<model>/     checkpoint.bin, losses.csv, latent_train.csv, latent_test.csv
//!     metrics.jsonl
//!     plots/<model>.svg
//! ```
//!
//! Every stage reads its inputs from disk, so stages can be run one at a
//! time or all at once.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{fit, load_checkpoint, save_checkpoint, LossReport, TrainMode};
use crate::config::PipelineConfig;
use crate::datasets::{FactorKind, LabeledDataset, Split};
use crate::error::{GraeError, Result};
use crate::io::{load_matrix_csv, save_matrix_csv};
use crate::matrix::DenseMatrix;
use crate::mds::{reference_embed, Embedding, EmbeddingSource};
use crate::metrics::{
    aggregate, r2_for, read_jsonl, reconstruction_mse, write_aggregate_csv, write_jsonl,
    MetricsReport,
};
use crate::plot::emit_scatter;
use crate::stitch::{embed_batches, make_plan, save_batches, save_plan, stitch_embeddings};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Embed,
    Stitch,
    Train,
    Evaluate,
    Plot,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Embed => "embed",
            Stage::Stitch => "stitch",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Plot => "plot",
        }
    }

    /// Stages executed by a full run.
    pub const FULL: [Stage; 5] = [
        Stage::Generate,
        Stage::Embed,
        Stage::Train,
        Stage::Evaluate,
        Stage::Plot,
    ];
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub seeds: Vec<u64>,
    /// `seed_<s>/<stage>` entries in completion order.
    pub completed: Vec<String>,
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join("manifest.json");
        if !path.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(out_dir.join("manifest.json"), text)?;
        Ok(())
    }

    fn mark(&mut self, entry: String) {
        if !self.completed.contains(&entry) {
            self.completed.push(entry);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DataMeta {
    name: String,
    factor_kind: String,
}

#[derive(Serialize, Deserialize)]
struct ReferenceMeta {
    source: String,
    diffusion_t: Option<usize>,
    stress: f64,
    stress_history: Vec<f64>,
    batch_count: Option<usize>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub dump_intermediates: bool,
}

fn missing(path: &Path, stage: &str) -> GraeError {
    GraeError::Config(format!(
        "{} not found; run the `{stage}` stage first",
        path.display()
    ))
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(&path, stage))
    }
}

fn column(values: &[f64]) -> DenseMatrix {
    DenseMatrix::from_vec(values.len(), 1, values.to_vec()).expect("column shape")
}

fn factor_header(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("factor{j}")).collect()
}

impl Pipeline {
    pub fn new(config: PipelineConfig, dump_intermediates: bool) -> Self {
        Pipeline {
            config,
            dump_intermediates,
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.config.out_dir.join(format!("seed_{seed}"))
    }

    pub fn model_dir(&self, seed: u64, mode: TrainMode) -> PathBuf {
        self.seed_dir(seed).join("models").join(mode.name())
    }

    /// Runs `stages` for every configured seed, then aggregates metrics when
    /// evaluation was among them. The manifest is rewritten after each
    /// stage, so a failed run leaves a record of what finished.
    pub fn execute(&self, stages: &[Stage]) -> Result<()> {
        let out = self.out_dir();
        fs::create_dir_all(out)?;
        fs::write(out.join("config.txt"), self.config.render())?;
        let mut manifest = Manifest::load(out)?;
        manifest.complete = false;
        manifest.error = None;
        manifest.seeds = self.config.seeds.clone();
        manifest.save(out)?;

        let result = self.execute_inner(stages, &mut manifest);
        if let Err(e) = &result {
            manifest.error = Some(e.to_string());
        } else {
            manifest.complete = self.config.seeds.iter().all(|s| {
                Stage::FULL
                    .iter()
                    .all(|st| manifest.completed.contains(&format!("seed_{s}/{}", st.name())))
            });
        }
        manifest.save(out)?;
        result
    }

    fn execute_inner(&self, stages: &[Stage], manifest: &mut Manifest) -> Result<()> {
        for &seed in &self.config.seeds {
            for &stage in stages {
                info!("seed {seed}: {}", stage.name());
                match stage {
                    Stage::Generate => self.generate(seed)?,
                    Stage::Embed => self.embed(seed, self.config.stitch.enabled)?,
                    Stage::Stitch => self.embed(seed, true)?,
                    Stage::Train => self.train(seed)?,
                    Stage::Evaluate => {
                        self.evaluate_seed(seed)?;
                    }
                    Stage::Plot => self.plot(seed)?,
                }
                let name = if stage == Stage::Stitch { "embed" } else { stage.name() };
                manifest.mark(format!("seed_{seed}/{name}"));
                manifest.save(self.out_dir())?;
            }
        }
        if stages.contains(&Stage::Evaluate) {
            self.aggregate()?;
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<()> {
        let ds = self.config.dataset.build(seed)?;
        let split = crate::datasets::split(&ds, &self.config.split.spec(seed))?;
        let dir = self.seed_dir(seed).join("data");
        fs::create_dir_all(&dir)?;
        save_matrix_csv(&dir.join("features.csv"), &ds.features, None)?;
        let fh = factor_header(ds.factors.cols());
        let fh: Vec<&str> = fh.iter().map(String::as_str).collect();
        save_matrix_csv(&dir.join("factors.csv"), &ds.factors, Some(&fh))?;
        if let Some(labels) = &ds.class_labels {
            let l: Vec<f64> = labels.iter().map(|&c| c as f64).collect();
            save_matrix_csv(&dir.join("labels.csv"), &column(&l), Some(&["label"]))?;
        }
        let mut is_test = vec![0.0; ds.len()];
        for &i in &split.test_indices {
            is_test[i] = 1.0;
        }
        save_matrix_csv(&dir.join("split.csv"), &column(&is_test), Some(&["is_test"]))?;
        let meta = DataMeta {
            name: ds.name.clone(),
            factor_kind: ds.factor_kind.name().to_string(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Reads the dataset and its split back from the run directory.
    pub fn load_split(&self, seed: u64) -> Result<Split> {
        let dir = self.seed_dir(seed).join("data");
        let meta: DataMeta =
            serde_json::from_str(&fs::read_to_string(require(dir.join("meta.json"), "generate")?)?)?;
        let kind = FactorKind::parse(&meta.factor_kind)
            .ok_or_else(|| GraeError::invalid(format!("unknown factor kind {}", meta.factor_kind)))?;
        let (features, _) = load_matrix_csv(&require(dir.join("features.csv"), "generate")?)?;
        let (factors, _) = load_matrix_csv(&require(dir.join("factors.csv"), "generate")?)?;
        let labels_path = dir.join("labels.csv");
        let labels = if labels_path.exists() {
            let (l, _) = load_matrix_csv(&labels_path)?;
            Some(l.as_slice().iter().map(|&v| v as usize).collect())
        } else {
            None
        };
        let (mask, _) = load_matrix_csv(&require(dir.join("split.csv"), "generate")?)?;
        let ds = LabeledDataset::new(meta.name, features, factors, kind, labels)?;
        if mask.rows() != ds.len() {
            return Err(GraeError::shape("split mask length differs from dataset size"));
        }
        let (test_indices, train_indices): (Vec<usize>, Vec<usize>) =
            (0..ds.len()).partition(|&i| mask.as_slice()[i] != 0.0);
        Ok(Split {
            train: ds.subset(&train_indices),
            test: ds.subset(&test_indices),
            train_indices,
            test_indices,
        })
    }

    /// Computes the reference embedding of the training rows, through the
    /// batched path when `stitched` is set.
    pub fn embed(&self, seed: u64, stitched: bool) -> Result<()> {
        let split = self.load_split(seed)?;
        let x = &split.train.features;
        let dir = self.seed_dir(seed).join("reference");
        fs::create_dir_all(&dir)?;
        let cfg = &self.config;
        let (embedding, meta) = if stitched {
            let n = x.rows();
            let plan = make_plan(n, cfg.stitch.batch_size, cfg.stitch.anchors_for(n), seed)?;
            let batches = embed_batches(x, &plan, &cfg.diffusion, &cfg.mds, seed)?;
            let sdir = self.seed_dir(seed).join("stitch");
            save_plan(&sdir, &plan)?;
            save_batches(&sdir, &batches)?;
            let mut e = stitch_embeddings(&plan, &batches)?;
            e.seed = seed;
            let meta = ReferenceMeta {
                source: e.source.name().to_string(),
                diffusion_t: None,
                stress: e.stress,
                stress_history: Vec::new(),
                batch_count: Some(plan.batch_count()),
            };
            (e, meta)
        } else {
            let r = reference_embed(x, &cfg.diffusion, &cfg.mds, seed)?;
            if self.dump_intermediates {
                let m = &r.model;
                save_matrix_csv(&dir.join("potential.csv"), &m.potential, None)?;
                save_matrix_csv(&dir.join("vne.csv"), &column(&m.vne_curve), Some(&["entropy"]))?;
                save_matrix_csv(&dir.join("spectrum.csv"), &column(&m.spectrum), Some(&["eigenvalue"]))?;
                save_matrix_csv(
                    &dir.join("bandwidths.csv"),
                    &column(&m.bandwidths),
                    Some(&["sigma"]),
                )?;
            }
            let meta = ReferenceMeta {
                source: r.embedding.source.name().to_string(),
                diffusion_t: Some(r.model.t),
                stress: r.embedding.stress,
                stress_history: r.stress_history.clone(),
                batch_count: None,
            };
            (r.embedding, meta)
        };
        embedding.write_csv(&dir.join("embedding.csv"))?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load_reference(&self, seed: u64) -> Result<Embedding> {
        let path = require(self.seed_dir(seed).join("reference").join("embedding.csv"), "embed")?;
        Embedding::read_csv(&path, EmbeddingSource::Mds)
    }

    pub fn train(&self, seed: u64) -> Result<()> {
        let split = self.load_split(seed)?;
        let reference = if self.config.models.contains(&TrainMode::Grae) {
            Some(self.load_reference(seed)?)
        } else {
            None
        };
        for &mode in &self.config.models {
            let cfg = self.config.train_config(mode, seed);
            let (net, history) = fit(&split.train.features, reference.as_ref(), &cfg)?;
            let dir = self.model_dir(seed, mode);
            fs::create_dir_all(&dir)?;
            save_checkpoint(&dir.join("checkpoint.bin"), &net, &cfg)?;
            write_losses(&dir.join("losses.csv"), &history)?;
            let header: Vec<String> = (1..=net.latent_dim()).map(|j| format!("z{j}")).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            save_matrix_csv(
                &dir.join("latent_train.csv"),
                &net.encode(&split.train.features)?,
                Some(&header),
            )?;
            save_matrix_csv(
                &dir.join("latent_test.csv"),
                &net.encode(&split.test.features)?,
                Some(&header),
            )?;
        }
        Ok(())
    }

    /// Scores every configured model of one seed on its test split and
    /// writes `seed_<s>/metrics.jsonl`.
    pub fn evaluate_seed(&self, seed: u64) -> Result<Vec<MetricsReport>> {
        let split = self.load_split(seed)?;
        let test = &split.test;
        let mut reports = Vec::new();
        for &mode in &self.config.models {
            let path = require(self.model_dir(seed, mode).join("checkpoint.bin"), "train")?;
            let (net, _) = load_checkpoint(&path)?;
            let z = net.encode(&test.features)?;
            let r2 = r2_for(&z, test)?;
            let mse = reconstruction_mse(&test.features, &net.reconstruct(&test.features)?)?;
            reports.push(MetricsReport {
                dataset_name: test.name.clone(),
                model_name: mode.name().to_string(),
                seed,
                r2,
                mse,
                rel_mse_pct: None,
                n_test: test.len(),
            });
        }
        if let Some(base) = reports.iter().find(|r| r.model_name == TrainMode::Vanilla.name()) {
            let base = base.mse;
            for r in reports.iter_mut().filter(|r| r.model_name != TrainMode::Vanilla.name()) {
                *r = r.clone().with_baseline(base)?;
            }
        }
        let f = File::create(self.seed_dir(seed).join("metrics.jsonl"))?;
        write_jsonl(BufWriter::new(f), &reports)?;
        Ok(reports)
    }

    /// Collects per-seed metrics into `metrics.jsonl` and `aggregate.csv`.
    pub fn aggregate(&self) -> Result<Vec<MetricsReport>> {
        let mut all = Vec::new();
        for &seed in &self.config.seeds {
            let path = require(self.seed_dir(seed).join("metrics.jsonl"), "evaluate")?;
            all.extend(read_jsonl(&path)?);
        }
        let out = self.out_dir();
        write_jsonl(BufWriter::new(File::create(out.join("metrics.jsonl"))?), &all)?;
        write_aggregate_csv(
            BufWriter::new(File::create(out.join("aggregate.csv"))?),
            &aggregate(&all),
        )?;
        Ok(all)
    }

    /// One SVG per model: every point encoded, colored by the first factor,
    /// training points gray.
    pub fn plot(&self, seed: u64) -> Result<()> {
        if self.config.mds.d != 2 {
            warn!("skipping plots: embedding dimension is {}", self.config.mds.d);
            return Ok(());
        }
        let split = self.load_split(seed)?;
        let n = split.train.len() + split.test.len();
        let d_in = split.train.features.cols();
        let mut x = DenseMatrix::zeros(n, d_in);
        let mut color = vec![0.0; n];
        let mut is_test = vec![false; n];
        for (part, idx, test) in [
            (&split.train, &split.train_indices, false),
            (&split.test, &split.test_indices, true),
        ] {
            for (r, &i) in idx.iter().enumerate() {
                x.row_mut(i).copy_from_slice(part.features.row(r));
                color[i] = part.factors[(r, 0)];
                is_test[i] = test;
            }
        }
        let dir = self.seed_dir(seed).join("plots");
        fs::create_dir_all(&dir)?;
        for &mode in &self.config.models {
            let path = require(self.model_dir(seed, mode).join("checkpoint.bin"), "train")?;
            let (net, _) = load_checkpoint(&path)?;
            let z = net.encode(&x)?;
            emit_scatter(&z, &color, Some(&is_test), &dir.join(format!("{}.svg", mode.name())))?;
        }
        Ok(())
    }
}

fn write_losses(path: &Path, history: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["epoch", "lambda", "reconstruction", "geometric"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:e}", h.lambda_current),
            format!("{:e}", h.reconstruction),
            format!("{:e}", h.geometric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

