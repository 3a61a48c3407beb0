//! Synthetic manifold generators and train/test splitting.
//!
//! All generators are deterministic functions of their parameters and seed.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{GraeError, Result};
use crate::io::{load_matrix_csv_with, Header};
use crate::matrix::DenseMatrix;
use crate::rng::{derive_seed, random_orthogonal, seeded, standard_normal};

const TAU: f64 = 2.0 * PI;

/// How the ground-truth factors of a dataset should be scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    /// Factors live on a plane; scored with a linear probe.
    Planar,
    /// Column 0 is an angle in `[0, 2π)`.
    Circular,
    /// Several circular manifolds, one per class label.
    ClusteredCircular,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Planar => "planar",
            FactorKind::Circular => "circular",
            FactorKind::ClusteredCircular => "clustered-circular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "planar" => Some(FactorKind::Planar),
            "circular" => Some(FactorKind::Circular),
            "clustered-circular" => Some(FactorKind::ClusteredCircular),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: String,
    /// `n×D` observations.
    pub features: DenseMatrix,
    /// `n×g` ground-truth latent factors.
    pub factors: DenseMatrix,
    pub factor_kind: FactorKind,
    pub class_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: DenseMatrix,
        factors: DenseMatrix,
        factor_kind: FactorKind,
        class_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if factors.rows() != n {
            return Err(GraeError::shape(format!(
                "{n} feature rows but {} factor rows",
                factors.rows()
            )));
        }
        if let Some(labels) = &class_labels {
            if labels.len() != n {
                return Err(GraeError::shape(format!(
                    "{n} feature rows but {} class labels",
                    labels.len()
                )));
            }
        }
        if factor_kind != FactorKind::Planar {
            if factors.cols() == 0 {
                return Err(GraeError::invalid("circular dataset without an angle column"));
            }
            if let Some(bad) = factors.column(0).iter().find(|a| !(0.0..TAU).contains(*a)) {
                return Err(GraeError::invalid(format!(
                    "circular factor {bad} outside [0, 2π)"
                )));
            }
        }
        if factor_kind == FactorKind::ClusteredCircular && class_labels.is_none() {
            return Err(GraeError::invalid(
                "clustered-circular datasets need class labels",
            ));
        }
        Ok(LabeledDataset {
            name: name.into(),
            features,
            factors,
            factor_kind,
            class_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows selected by index, keeping features, factors and labels aligned.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            factors: self.factors.select_rows(indices),
            factor_kind: self.factor_kind,
            class_labels: self
                .class_labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Unwhitened Swiss Roll coordinates for uniform draws `u ∈ [0,1)` and
/// height `h`: `(t cos t, h, t sin t)` with `t = 1.5π(1 + 2u)`.
pub fn swiss_roll_point(u: f64, h: f64) -> [f64; 3] {
    let t = 1.5 * PI * (1.0 + 2.0 * u);
    [t * t.cos(), h, t * t.sin()]
}

/// Raw Swiss Roll sample before whitening and rotation: `(points, factors)`
/// with factors `(t, h)`.
pub fn swiss_roll_raw(n: usize, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
    if n < 10 {
        return Err(GraeError::invalid(format!("swiss roll needs n >= 10, got {n}")));
    }
    let mut rng = seeded(derive_seed(seed, 0x5715));
    let mut points = DenseMatrix::zeros(n, 3);
    let mut factors = DenseMatrix::zeros(n, 2);
    for i in 0..n {
        let u: f64 = rng.random();
        let h = 21.0 * rng.random::<f64>();
        let p = swiss_roll_point(u, h);
        points.row_mut(i).copy_from_slice(&p);
        factors[(i, 0)] = 1.5 * PI * (1.0 + 2.0 * u);
        factors[(i, 1)] = h;
    }
    Ok((points, factors))
}

/// Centers every column and scales it to unit sample variance (`n − 1`
/// denominator). Constant columns are only centered.
pub fn standardize_columns(m: &mut DenseMatrix) {
    m.center_columns();
    let n = m.rows();
    if n < 2 {
        return;
    }
    for j in 0..m.cols() {
        let var = (0..n).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>() / (n - 1) as f64;
        if var > 0.0 {
            let sd = var.sqrt();
            for i in 0..n {
                m[(i, j)] /= sd;
            }
        }
    }
}

/// Swiss Roll: per-axis unit variance, then a seeded random rotation.
/// Factors are the roll parameter `t` and the height `h`.
pub fn make_swiss_roll(n: usize, seed: u64) -> Result<LabeledDataset> {
    let (mut points, factors) = swiss_roll_raw(n, seed)?;
    standardize_columns(&mut points);
    let rotation = random_orthogonal(3, &mut seeded(derive_seed(seed, 0x0807)));
    let features = points.matmul(&rotation)?;
    LabeledDataset::new("swiss_roll", features, factors, FactorKind::Planar, None)
}

/// A seeded, asymmetric arrangement of Gaussian blobs inside the disk
/// inscribed in the image, so rotations never clip it.
#[derive(Clone, Debug)]
pub struct BlobPattern {
    /// `(x, y, sigma, amplitude)` in units of the image side, centered at 0.
    blobs: Vec<(f64, f64, f64, f64)>,
}

impl BlobPattern {
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(derive_seed(seed, 0xb10b));
        let count = 5;
        let blobs = (0..count)
            .map(|_| {
                let r = 0.30 * rng.random::<f64>().sqrt();
                let a = TAU * rng.random::<f64>();
                let sigma = 0.055 + 0.05 * rng.random::<f64>();
                let amp = 0.5 + 0.5 * rng.random::<f64>();
                (r * a.cos(), r * a.sin(), sigma, amp)
            })
            .collect();
        BlobPattern { blobs }
    }

    /// Intensity at a point given in units of the image side, centered at 0.
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let v: f64 = self
            .blobs
            .iter()
            .map(|&(bx, by, s, amp)| {
                let d2 = (x - bx).powi(2) + (y - by).powi(2);
                amp * (-d2 / (2.0 * s * s)).exp()
            })
            .sum();
        v.clamp(0.0, 1.0)
    }

    /// Unrotated raster, row-major `side×side`, pixel centers sampled.
    pub fn rasterize(&self, side: usize) -> Vec<f64> {
        let c = (side as f64 - 1.0) / 2.0;
        let mut img = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                let x = (col as f64 - c) / side as f64;
                let y = (row as f64 - c) / side as f64;
                img.push(self.intensity(x, y));
            }
        }
        img
    }
}

/// Rotates a square row-major image about its center by `angle` radians
/// with bilinear resampling; samples falling outside the image read as 0.
pub fn rotate_bilinear(image: &[f64], side: usize, angle: f64) -> Vec<f64> {
    assert_eq!(image.len(), side * side);
    let c = (side as f64 - 1.0) / 2.0;
    let (s, co) = angle.sin_cos();
    let at = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= side as isize || q >= side as isize {
            0.0
        } else {
            image[r as usize * side + q as usize]
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let dx = col as f64 - c;
            let dy = row as f64 - c;
            // inverse rotation maps output pixel back into the source image
            let sx = co * dx + s * dy + c;
            let sy = -s * dx + co * dy + c;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fx) * (1.0 - fy) * at(y0, x0)
                + fx * (1.0 - fy) * at(y0, x0 + 1)
                + (1.0 - fx) * fy * at(y0 + 1, x0)
                + fx * fy * at(y0 + 1, x0 + 1);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Full rotations of `n_objects` seeded blob patterns through `n_angles`
/// equal steps. Factor column 0 is the rotation angle; with more than one
/// object the dataset is clustered-circular and labeled by object index.
pub fn make_rotating_object(
    n_angles: usize,
    image_side: usize,
    n_objects: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_angles < 8 || image_side < 8 || n_objects == 0 {
        return Err(GraeError::invalid(format!(
            "rotating object needs n_angles >= 8, image_side >= 8, n_objects >= 1 \
             (got {n_angles}, {image_side}, {n_objects})"
        )));
    }
    let d = image_side * image_side;
    let n = n_angles * n_objects;
    let mut features = DenseMatrix::zeros(n, d);
    let mut factors = DenseMatrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for obj in 0..n_objects {
        let base = BlobPattern::random(derive_seed(seed, obj as u64 + 1)).rasterize(image_side);
        for k in 0..n_angles {
            let row = obj * n_angles + k;
            let angle = k as f64 * TAU / n_angles as f64;
            features
                .row_mut(row)
                .copy_from_slice(&rotate_bilinear(&base, image_side, angle));
            factors[(row, 0)] = angle;
            labels.push(obj);
        }
    }
    let (kind, labels) = if n_objects > 1 {
        (FactorKind::ClusteredCircular, Some(labels))
    } else {
        (FactorKind::Circular, None)
    };
    LabeledDataset::new("rotating_object", features, factors, kind, labels)
}

/// Background intensity of the object-tracking images.
pub const TRACKING_BACKGROUND: f64 = 0.5;

/// A seeded binary "character" sprite moving over a noisy gray background.
/// Factors are the sprite's integer `(x, y)` offsets.
pub fn make_object_tracking(
    n: usize,
    bg_side: usize,
    sprite_side: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if sprite_side == 0 || sprite_side >= bg_side {
        return Err(GraeError::invalid(format!(
            "sprite side {sprite_side} must be positive and smaller than background {bg_side}"
        )));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(GraeError::invalid(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    if n == 0 {
        return Err(GraeError::invalid("object tracking needs n >= 1"));
    }
    let mut sprite_rng = seeded(derive_seed(seed, 0x5b17));
    let sprite: Vec<f64> = (0..sprite_side * sprite_side)
        .map(|_| if sprite_rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
        .collect();

    let mut rng = seeded(derive_seed(seed, 0x7ac4));
    let span = bg_side - sprite_side;
    let mut features = DenseMatrix::zeros(n, bg_side * bg_side);
    let mut factors = DenseMatrix::zeros(n, 2);
    for i in 0..n {
        let x = rng.random_range(0..=span);
        let y = rng.random_range(0..=span);
        factors[(i, 0)] = x as f64;
        factors[(i, 1)] = y as f64;
        let row = features.row_mut(i);
        for r in 0..bg_side {
            for c in 0..bg_side {
                let inside = (y..y + sprite_side).contains(&r) && (x..x + sprite_side).contains(&c);
                row[r * bg_side + c] = if inside {
                    sprite[(r - y) * sprite_side + (c - x)]
                } else if noise_sd > 0.0 {
                    (TRACKING_BACKGROUND + noise_sd * standard_normal(&mut rng)).clamp(0.0, 1.0)
                } else {
                    TRACKING_BACKGROUND
                };
            }
        }
    }
    LabeledDataset::new("object_tracking", features, factors, FactorKind::Planar, None)
}

/// Loads a dataset from a features CSV and a factors CSV with matching row
/// counts. `labels`, when given, is a one-column CSV of class indices.
pub fn load_csv_dataset(
    name: &str,
    features: &Path,
    factors: &Path,
    labels: Option<&Path>,
    factor_kind: FactorKind,
    header: Header,
) -> Result<LabeledDataset> {
    let (x, _) = load_matrix_csv_with(features, header)?;
    let (f, _) = load_matrix_csv_with(factors, header)?;
    let labels = match labels {
        Some(p) => {
            let (l, _) = load_matrix_csv_with(p, header)?;
            if l.cols() != 1 {
                return Err(GraeError::shape(format!(
                    "{}: labels file must have one column, found {}",
                    p.display(),
                    l.cols()
                )));
            }
            let mut out = Vec::with_capacity(l.rows());
            for (i, &v) in l.as_slice().iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(GraeError::Parse {
                        path: p.to_path_buf(),
                        message: format!("row {}: label {v} is not a class index", i + 1),
                    });
                }
                out.push(v as usize);
            }
            Some(out)
        }
        None => None,
    };
    if x.rows() == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    LabeledDataset::new(name, x, f, factor_kind, labels)
}

/// How to carve a test set out of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// Seeded shuffle, then `round(n · test_fraction)` rows go to test.
    RandomFraction { test_fraction: f64, seed: u64 },
    /// The `slice_count` rows whose first factor is nearest the factor
    /// median (out-of-distribution hold-out for planar manifolds).
    MiddleSlice { slice_count: usize },
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Original row indices, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    let n = ds.len();
    let mut test_indices = match *spec {
        SplitSpec::RandomFraction {
            test_fraction,
            seed,
        } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(GraeError::invalid(format!(
                    "test_fraction must lie in (0, 1), got {test_fraction}"
                )));
            }
            let n_test = (n as f64 * test_fraction).round() as usize;
            if n_test == 0 || n_test >= n {
                return Err(GraeError::invalid(format!(
                    "test_fraction {test_fraction} leaves an empty side on {n} rows"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seeded(derive_seed(seed, 0x5917)));
            order.truncate(n_test);
            order
        }
        SplitSpec::MiddleSlice { slice_count } => {
            if ds.factor_kind != FactorKind::Planar {
                return Err(GraeError::invalid(
                    "middle_slice split requires planar factors",
                ));
            }
            if slice_count == 0 || slice_count >= n {
                return Err(GraeError::invalid(format!(
                    "slice_count {slice_count} must lie in [1, {n})"
                )));
            }
            let first = ds.factors.column(0);
            let median = median(&first);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                (first[a] - median)
                    .abs()
                    .total_cmp(&(first[b] - median).abs())
                    .then(a.cmp(&b))
            });
            order.truncate(slice_count);
            order
        }
    };
    test_indices.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test_indices {
        is_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok(Split {
        train: ds.subset(&train_indices),
        test: ds.subset(&test_indices),
        train_indices,
        test_indices,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
