//! Pipeline configuration in a line-oriented `section.key = value` format.
//!
//! ```text
//! # comments start with '#'
//! dataset.name = swiss_roll
//! dataset.n = 3250
//! split.kind = middle_slice
//! split.slice_count = 250
//! train.models = grae, ae
//! run.seeds = 0, 1, 2
//! ```
//!
//! Every key is optional; unspecified values take the defaults of
//! [`PipelineConfig::default`]. Unknown keys, duplicate keys and keys that do
//! not apply to the chosen dataset are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autoencoder::{OptimizerKind, TrainConfig, TrainMode};
use crate::datasets::{self, FactorKind, LabeledDataset, SplitSpec};
use crate::diffusion::{DiffusionParams, KneeStrategy};
use crate::error::{GraeError, Result};
use crate::io::Header;
use crate::mds::MdsParams;
use crate::stitch::default_anchor_count;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetConfig {
    SwissRoll {
        n: usize,
    },
    RotatingObject {
        n_angles: usize,
        image_side: usize,
        n_objects: usize,
    },
    ObjectTracking {
        n: usize,
        bg_side: usize,
        sprite_side: usize,
        noise_sd: f64,
    },
    Csv {
        features: PathBuf,
        factors: PathBuf,
        labels: Option<PathBuf>,
        factor_kind: FactorKind,
        header: Header,
    },
}

impl DatasetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::SwissRoll { .. } => "swiss_roll",
            DatasetConfig::RotatingObject { .. } => "rotating_object",
            DatasetConfig::ObjectTracking { .. } => "object_tracking",
            DatasetConfig::Csv { .. } => "csv",
        }
    }

    fn factor_kind(&self) -> FactorKind {
        match self {
            DatasetConfig::SwissRoll { .. } | DatasetConfig::ObjectTracking { .. } => {
                FactorKind::Planar
            }
            DatasetConfig::RotatingObject { n_objects, .. } => {
                if *n_objects > 1 {
                    FactorKind::ClusteredCircular
                } else {
                    FactorKind::Circular
                }
            }
            DatasetConfig::Csv { factor_kind, .. } => *factor_kind,
        }
    }

    /// Generates (or loads) the dataset. Generators are seeded with `seed`.
    pub fn build(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            DatasetConfig::SwissRoll { n } => datasets::make_swiss_roll(*n, seed),
            DatasetConfig::RotatingObject {
                n_angles,
                image_side,
                n_objects,
            } => datasets::make_rotating_object(*n_angles, *image_side, *n_objects, seed),
            DatasetConfig::ObjectTracking {
                n,
                bg_side,
                sprite_side,
                noise_sd,
            } => datasets::make_object_tracking(*n, *bg_side, *sprite_side, *noise_sd, seed),
            DatasetConfig::Csv {
                features,
                factors,
                labels,
                factor_kind,
                header,
            } => datasets::load_csv_dataset(
                "csv",
                features,
                factors,
                labels.as_deref(),
                *factor_kind,
                *header,
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitConfig {
    MiddleSlice { slice_count: usize },
    RandomFraction { test_fraction: f64 },
}

impl SplitConfig {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        match *self {
            SplitConfig::MiddleSlice { slice_count } => SplitSpec::MiddleSlice { slice_count },
            SplitConfig::RandomFraction { test_fraction } => SplitSpec::RandomFraction {
                test_fraction,
                seed,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StitchConfig {
    pub enabled: bool,
    pub batch_size: usize,
    /// `None` picks [`default_anchor_count`] of the training set size.
    pub anchor_count: Option<usize>,
}

impl StitchConfig {
    pub fn anchors_for(&self, n: usize) -> usize {
        self.anchor_count.unwrap_or_else(|| default_anchor_count(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub diffusion: DiffusionParams,
    pub mds: MdsParams,
    /// Shared training settings; `mode`, `seed` and `latent_dim` are set per
    /// model and run (`latent_dim` always equals `mds.d`).
    pub train: TrainConfig,
    pub models: Vec<TrainMode>,
    pub stitch: StitchConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: DatasetConfig::SwissRoll { n: 3250 },
            split: SplitConfig::MiddleSlice { slice_count: 250 },
            diffusion: DiffusionParams::default(),
            mds: MdsParams::default(),
            train: TrainConfig::default(),
            models: vec![TrainMode::Grae, TrainMode::Vanilla],
            stitch: StitchConfig {
                enabled: false,
                batch_size: 1000,
                anchor_count: None,
            },
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
        }
    }
}

const KEYS: &[&str] = &[
    "dataset.name",
    "dataset.n",
    "dataset.n_angles",
    "dataset.image_side",
    "dataset.n_objects",
    "dataset.bg_side",
    "dataset.sprite_side",
    "dataset.noise_sd",
    "dataset.features",
    "dataset.factors",
    "dataset.labels",
    "dataset.factor_kind",
    "dataset.header",
    "split.kind",
    "split.slice_count",
    "split.test_fraction",
    "diffusion.knn_k",
    "diffusion.decay_alpha",
    "diffusion.t_max",
    "diffusion.log_floor",
    "diffusion.knee",
    "diffusion.t",
    "mds.d",
    "mds.max_iter",
    "mds.rel_tol",
    "train.models",
    "train.lambda_max",
    "train.schedule_alpha",
    "train.epochs",
    "train.learning_rate",
    "train.batch_size",
    "train.weight_decay",
    "train.optimizer",
    "train.hidden_widths",
    "train.standardize_reference",
    "stitch.enabled",
    "stitch.batch_size",
    "stitch.anchor_count",
    "run.out",
    "run.seeds",
];

fn cfg_err(msg: impl Into<String>) -> GraeError {
    GraeError::Config(msg.into())
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|e| cfg_err(format!("line {line}: {key} = {v}: {e}"))),
        }
    }

    fn get_with<T>(&mut self, key: &str, default: T, f: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => {
                f(&v).ok_or_else(|| cfg_err(format!("line {line}: {key}: unrecognized value {v:?}")))
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|e| cfg_err(format!("line {line}: {key}: {s:?}: {e}")))
                })
                .collect(),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_auto_usize(s: &str) -> Option<Option<usize>> {
    if s == "auto" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn parse_mode(s: &str) -> Option<TrainMode> {
    match s {
        "grae" => Some(TrainMode::Grae),
        "ae" | "vanilla" => Some(TrainMode::Vanilla),
        _ => None,
    }
}

fn parse_header(s: &str) -> Option<Header> {
    match s {
        "auto" => Some(Header::Auto),
        _ => parse_bool(s).map(|b| if b { Header::Present } else { Header::Absent }),
    }
}

impl PipelineConfig {
    /// Parses config text. Relative CSV paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {line}: expected `section.key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(cfg_err(format!("line {line}: unknown key {k:?}")));
            }
            if let Some((prev, _)) = map.insert(k.to_string(), (line, v.to_string())) {
                return Err(cfg_err(format!("line {line}: {k} already set on line {prev}")));
            }
        }
        let mut e = Entries { map };
        let d = PipelineConfig::default();

        let name = e.get("dataset.name", d.dataset.name().to_string())?;
        let dataset = match name.as_str() {
            "swiss_roll" => DatasetConfig::SwissRoll {
                n: e.get("dataset.n", 3250)?,
            },
            "rotating_object" => DatasetConfig::RotatingObject {
                n_angles: e.get("dataset.n_angles", 360)?,
                image_side: e.get("dataset.image_side", 16)?,
                n_objects: e.get("dataset.n_objects", 1)?,
            },
            "object_tracking" => DatasetConfig::ObjectTracking {
                n: e.get("dataset.n", 2000)?,
                bg_side: e.get("dataset.bg_side", 24)?,
                sprite_side: e.get("dataset.sprite_side", 6)?,
                noise_sd: e.get("dataset.noise_sd", 0.1)?,
            },
            "csv" => {
                let resolve = |p: String| base.join(p);
                let features = e
                    .take("dataset.features")
                    .ok_or_else(|| cfg_err("dataset.name = csv needs dataset.features"))?
                    .1;
                let factors = e
                    .take("dataset.factors")
                    .ok_or_else(|| cfg_err("dataset.name = csv needs dataset.factors"))?
                    .1;
                DatasetConfig::Csv {
                    features: resolve(features),
                    factors: resolve(factors),
                    labels: e.take("dataset.labels").map(|(_, v)| resolve(v)),
                    factor_kind: e.get_with("dataset.factor_kind", FactorKind::Planar, FactorKind::parse)?,
                    header: e.get_with("dataset.header", Header::Auto, parse_header)?,
                }
            }
            other => return Err(cfg_err(format!("unknown dataset.name {other:?}"))),
        };
        if let Some(k) = e.map.keys().find(|k| k.starts_with("dataset.")) {
            return Err(cfg_err(format!("{k} does not apply to dataset {name}")));
        }

        let kind = e.get("split.kind", "middle_slice".to_string())?;
        let split = match kind.as_str() {
            "middle_slice" => SplitConfig::MiddleSlice {
                slice_count: e.get("split.slice_count", 250)?,
            },
            "random_fraction" => SplitConfig::RandomFraction {
                test_fraction: e.get("split.test_fraction", 0.2)?,
            },
            other => return Err(cfg_err(format!("unknown split.kind {other:?}"))),
        };
        if let Some(k) = e.map.keys().find(|k| k.starts_with("split.")) {
            return Err(cfg_err(format!("{k} does not apply to split.kind = {kind}")));
        }

        let dd = &d.diffusion;
        let diffusion = DiffusionParams {
            knn_k: e.get("diffusion.knn_k", dd.knn_k)?,
            decay_alpha: e.get("diffusion.decay_alpha", dd.decay_alpha)?,
            t_max: e.get("diffusion.t_max", dd.t_max)?,
            log_floor: e.get("diffusion.log_floor", dd.log_floor)?,
            knee: e.get_with("diffusion.knee", dd.knee, KneeStrategy::parse)?,
            t_override: e.get_with("diffusion.t", dd.t_override, parse_auto_usize)?,
        };
        let mds = MdsParams {
            d: e.get("mds.d", d.mds.d)?,
            max_iter: e.get("mds.max_iter", d.mds.max_iter)?,
            rel_tol: e.get("mds.rel_tol", d.mds.rel_tol)?,
        };
        let dt = &d.train;
        let models = match e.take("train.models") {
            None => d.models.clone(),
            Some((line, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    parse_mode(s).ok_or_else(|| cfg_err(format!("line {line}: unknown model {s:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let train = TrainConfig {
            lambda_max: e.get("train.lambda_max", dt.lambda_max)?,
            schedule_alpha: e.get("train.schedule_alpha", dt.schedule_alpha)?,
            epochs: e.get("train.epochs", dt.epochs)?,
            learning_rate: e.get("train.learning_rate", dt.learning_rate)?,
            batch_size: e.get("train.batch_size", dt.batch_size)?,
            weight_decay: e.get("train.weight_decay", dt.weight_decay)?,
            optimizer: e.get_with("train.optimizer", dt.optimizer, OptimizerKind::parse)?,
            hidden_widths: e.list("train.hidden_widths", dt.hidden_widths.clone())?,
            standardize_reference: e.get_with(
                "train.standardize_reference",
                dt.standardize_reference,
                parse_bool,
            )?,
            latent_dim: mds.d,
            ..dt.clone()
        };
        let stitch = StitchConfig {
            enabled: e.get_with("stitch.enabled", d.stitch.enabled, parse_bool)?,
            batch_size: e.get("stitch.batch_size", d.stitch.batch_size)?,
            anchor_count: e.get_with("stitch.anchor_count", d.stitch.anchor_count, parse_auto_usize)?,
        };
        let out_dir = e
            .take("run.out")
            .map(|(_, v)| PathBuf::from(v))
            .unwrap_or(d.out_dir);
        let seeds = e.list("run.seeds", d.seeds)?;
        debug_assert!(e.map.is_empty(), "unconsumed keys {:?}", e.map.keys());

        let cfg = PipelineConfig {
            dataset,
            split,
            diffusion,
            mds,
            train,
            models,
            stitch,
            out_dir,
            seeds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Checks every module parameter before any work starts. All failures
    /// are reported as [`GraeError::Config`].
    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, r: Result<()>| {
            r.map_err(|e| match e {
                GraeError::Config(m) => GraeError::Config(m),
                other => cfg_err(format!("{what}: {other}")),
            })
        };
        match &self.dataset {
            DatasetConfig::SwissRoll { n } => {
                if *n < 10 {
                    return Err(cfg_err(format!("dataset.n must be >= 10, got {n}")));
                }
            }
            DatasetConfig::RotatingObject {
                n_angles,
                image_side,
                n_objects,
            } => {
                if *n_angles < 8 || *image_side < 8 || *n_objects == 0 {
                    return Err(cfg_err(
                        "rotating_object needs n_angles >= 8, image_side >= 8, n_objects >= 1",
                    ));
                }
            }
            DatasetConfig::ObjectTracking {
                n,
                bg_side,
                sprite_side,
                noise_sd,
            } => {
                if *n == 0 || *sprite_side == 0 || sprite_side >= bg_side {
                    return Err(cfg_err(
                        "object_tracking needs n >= 1 and 0 < sprite_side < bg_side",
                    ));
                }
                if !(*noise_sd >= 0.0) || !noise_sd.is_finite() {
                    return Err(cfg_err("dataset.noise_sd must be finite and >= 0"));
                }
            }
            DatasetConfig::Csv {
                features, factors, ..
            } => {
                for p in [features, factors] {
                    if !p.is_file() {
                        return Err(cfg_err(format!("{} is not a readable file", p.display())));
                    }
                }
            }
        }
        match self.split {
            SplitConfig::MiddleSlice { slice_count } => {
                if self.dataset.factor_kind() != FactorKind::Planar {
                    return Err(cfg_err("middle_slice split requires a planar dataset"));
                }
                if slice_count == 0 {
                    return Err(cfg_err("split.slice_count must be >= 1"));
                }
                if let Some(n) = self.dataset_len() {
                    if slice_count >= n {
                        return Err(cfg_err(format!(
                            "split.slice_count {slice_count} must be below dataset size {n}"
                        )));
                    }
                }
            }
            SplitConfig::RandomFraction { test_fraction } => {
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(cfg_err("split.test_fraction must lie in (0, 1)"));
                }
            }
        }
        wrap("diffusion", self.diffusion.validate())?;
        wrap("mds", self.mds.validate())?;
        wrap("train", self.train.validate())?;
        if self.train.latent_dim != self.mds.d {
            return Err(cfg_err("train latent dimension must equal mds.d"));
        }
        if self.models.is_empty() {
            return Err(cfg_err("train.models must name at least one model"));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("run.seeds must list at least one seed"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(cfg_err("run.seeds contains duplicates"));
        }
        if self.stitch.enabled {
            if self.stitch.batch_size == 0 {
                return Err(cfg_err("stitch.batch_size must be >= 1"));
            }
            if self.stitch.anchor_count == Some(0) {
                return Err(cfg_err("stitch.anchor_count must be >= 1"));
            }
            if let Some(a) = self.stitch.anchor_count {
                if a >= self.stitch.batch_size {
                    return Err(cfg_err("stitch.anchor_count must be below stitch.batch_size"));
                }
            }
        }
        Ok(())
    }

    /// Number of rows the dataset will have, when known without loading it.
    pub fn dataset_len(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::SwissRoll { n } | DatasetConfig::ObjectTracking { n, .. } => Some(*n),
            DatasetConfig::RotatingObject {
                n_angles, n_objects, ..
            } => Some(n_angles * n_objects),
            DatasetConfig::Csv { .. } => None,
        }
    }

    /// Training configuration for one model and seed.
    pub fn train_config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            seed,
            latent_dim: self.mds.d,
            ..self.train.clone()
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset.name", &self.dataset.name());
        match &self.dataset {
            DatasetConfig::SwissRoll { n } => kv("dataset.n", n),
            DatasetConfig::RotatingObject {
                n_angles,
                image_side,
                n_objects,
            } => {
                kv("dataset.n_angles", n_angles);
                kv("dataset.image_side", image_side);
                kv("dataset.n_objects", n_objects);
            }
            DatasetConfig::ObjectTracking {
                n,
                bg_side,
                sprite_side,
                noise_sd,
            } => {
                kv("dataset.n", n);
                kv("dataset.bg_side", bg_side);
                kv("dataset.sprite_side", sprite_side);
                kv("dataset.noise_sd", noise_sd);
            }
            DatasetConfig::Csv {
                features,
                factors,
                labels,
                factor_kind,
                header,
            } => {
                kv("dataset.features", &features.display());
                kv("dataset.factors", &factors.display());
                if let Some(l) = labels {
                    kv("dataset.labels", &l.display());
                }
                kv("dataset.factor_kind", &factor_kind.name());
                let h = match header {
                    Header::Auto => "auto",
                    Header::Present => "true",
                    Header::Absent => "false",
                };
                kv("dataset.header", &h);
            }
        }
        match self.split {
            SplitConfig::MiddleSlice { slice_count } => {
                kv("split.kind", &"middle_slice");
                kv("split.slice_count", &slice_count);
            }
            SplitConfig::RandomFraction { test_fraction } => {
                kv("split.kind", &"random_fraction");
                kv("split.test_fraction", &test_fraction);
            }
        }
        let df = &self.diffusion;
        kv("diffusion.knn_k", &df.knn_k);
        kv("diffusion.decay_alpha", &df.decay_alpha);
        kv("diffusion.t_max", &df.t_max);
        kv("diffusion.log_floor", &df.log_floor);
        kv("diffusion.knee", &df.knee.name());
        kv("diffusion.t", &auto_or(df.t_override));
        kv("mds.d", &self.mds.d);
        kv("mds.max_iter", &self.mds.max_iter);
        kv("mds.rel_tol", &self.mds.rel_tol);
        let t = &self.train;
        let models: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        kv("train.models", &models.join(", "));
        kv("train.lambda_max", &t.lambda_max);
        kv("train.schedule_alpha", &t.schedule_alpha);
        kv("train.epochs", &t.epochs);
        kv("train.learning_rate", &t.learning_rate);
        kv("train.batch_size", &t.batch_size);
        kv("train.weight_decay", &t.weight_decay);
        kv("train.optimizer", &t.optimizer.name());
        let widths: Vec<String> = t.hidden_widths.iter().map(|w| w.to_string()).collect();
        kv("train.hidden_widths", &widths.join(", "));
        kv("train.standardize_reference", &t.standardize_reference);
        kv("stitch.enabled", &self.stitch.enabled);
        kv("stitch.batch_size", &self.stitch.batch_size);
        kv("stitch.anchor_count", &auto_or(self.stitch.anchor_count));
        kv("run.out", &self.out_dir.display());
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        kv("run.seeds", &seeds.join(", "));
        s
    }
}

fn auto_or(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

/// Parses a `--seed` override such as `0,1,2`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|e| cfg_err(format!("bad seed {p:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(cfg_err("empty seed list"));
    }
    Ok(seeds)
}
