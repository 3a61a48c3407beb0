//! Large-data embedding: split the rows into overlapping batches that share
//! a set of anchor rows, embed each batch on its own, then align every batch
//! onto the first with a similarity Procrustes fit on the anchors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::diffusion::DiffusionParams;
use crate::error::{GraeError, Result};
use crate::matrix::{dot, sq_dist, DenseMatrix};
use crate::mds::{reference_embed, Embedding, EmbeddingSource, MdsParams};
use crate::numerics::symmetric_eigen;
use crate::rng::{derive_seed, seeded};

/// Default anchor-residual warning threshold as a fraction of the batch
/// embedding diameter.
pub const RESIDUAL_WARN_FRACTION: f64 = 0.25;

/// `max(50, ⌈2% of n⌉)`.
pub fn default_anchor_count(n: usize) -> usize {
    50.max((n as f64 * 0.02).ceil() as usize)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StitchPlan {
    /// Each batch lists the anchors first (in `anchor_indices` order), then
    /// its unique rows in increasing order.
    pub batches: Vec<Vec<usize>>,
    pub anchor_indices: Vec<usize>,
    pub n: usize,
}

impl StitchPlan {
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_indices.len()
    }

    /// Rows of batch `k` that are not anchors.
    pub fn unique_rows(&self, k: usize) -> &[usize] {
        &self.batches[k][self.anchor_count()..]
    }

    /// Checks the anchor and partition invariants.
    pub fn validate(&self) -> Result<()> {
        let a = self.anchor_count();
        let mut seen = vec![0u8; self.n];
        for &i in &self.anchor_indices {
            if i >= self.n || seen[i] != 0 {
                return Err(GraeError::invalid(format!("bad anchor index {i}")));
            }
            seen[i] = 2;
        }
        for (k, b) in self.batches.iter().enumerate() {
            if b.len() < a || b[..a] != self.anchor_indices[..] {
                return Err(GraeError::invalid(format!(
                    "batch {k} does not start with the anchor rows"
                )));
            }
            for &i in &b[a..] {
                if i >= self.n || seen[i] != 0 {
                    return Err(GraeError::invalid(format!(
                        "row {i} is out of range or appears twice"
                    )));
                }
                seen[i] = 1;
            }
        }
        if let Some(i) = seen.iter().position(|&s| s == 0) {
            return Err(GraeError::invalid(format!("row {i} is in no batch")));
        }
        Ok(())
    }

    /// Plain-text manifest: an `n` line, an `anchors` line and one
    /// `batch <k>` line per batch, each followed by its row indices.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n {}", self.n);
        let _ = write!(s, "anchors");
        for i in &self.anchor_indices {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
        for (k, b) in self.batches.iter().enumerate() {
            let _ = write!(s, "batch {k}");
            for i in &b[self.anchor_count()..] {
                let _ = write!(s, " {i}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |m: String| GraeError::Parse {
            path: Default::default(),
            message: m,
        };
        let mut n = None;
        let mut anchors = None;
        let mut uniques: Vec<Vec<usize>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums = || -> Result<Vec<usize>> {
                parts
                    .clone()
                    .map(|p| {
                        p.parse::<usize>()
                            .map_err(|e| bad(format!("line {}: {e}", ln + 1)))
                    })
                    .collect()
            };
            match key {
                "n" => n = nums()?.first().copied(),
                "anchors" => anchors = Some(nums()?),
                "batch" => {
                    let v = nums()?;
                    let (&k, rows) = v
                        .split_first()
                        .ok_or_else(|| bad(format!("line {}: missing batch index", ln + 1)))?;
                    if k != uniques.len() {
                        return Err(bad(format!("line {}: batches out of order", ln + 1)));
                    }
                    uniques.push(rows.to_vec());
                }
                other => return Err(bad(format!("line {}: unknown key {other:?}", ln + 1))),
            }
        }
        let n = n.ok_or_else(|| bad("missing n line".into()))?;
        let anchors = anchors.ok_or_else(|| bad("missing anchors line".into()))?;
        let batches = uniques
            .into_iter()
            .map(|u| anchors.iter().copied().chain(u).collect())
            .collect();
        let plan = StitchPlan {
            batches,
            anchor_indices: anchors,
            n,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Samples anchors uniformly and deals the remaining rows round-robin into
/// `⌈(n − a)/(batch_size − a)⌉` batches.
pub fn make_plan(n: usize, batch_size: usize, anchor_count: usize, seed: u64) -> Result<StitchPlan> {
    if anchor_count == 0 || anchor_count >= batch_size {
        return Err(GraeError::invalid(format!(
            "need 0 < anchor_count < batch_size (got {anchor_count}, {batch_size})"
        )));
    }
    if n <= batch_size {
        return Err(GraeError::invalid(format!(
            "need n > batch_size (got n = {n}, batch_size = {batch_size})"
        )));
    }
    let mut rng = seeded(seed);
    let mut anchors = sample(&mut rng, n, anchor_count).into_vec();
    anchors.sort_unstable();
    let mut is_anchor = vec![false; n];
    anchors.iter().for_each(|&i| is_anchor[i] = true);
    let per = batch_size - anchor_count;
    let count = (n - anchor_count).div_ceil(per);
    let mut batches: Vec<Vec<usize>> = (0..count).map(|_| anchors.clone()).collect();
    for (j, i) in (0..n).filter(|&i| !is_anchor[i]).enumerate() {
        batches[j % count].push(i);
    }
    Ok(StitchPlan {
        batches,
        anchor_indices: anchors,
        n,
    })
}

/// `x ↦ scale·x·R + translation` on row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: DenseMatrix,
    pub scale: f64,
    pub translation: Vec<f64>,
}

impl SimilarityTransform {
    pub fn identity(d: usize) -> Self {
        SimilarityTransform {
            rotation: DenseMatrix::identity(d),
            scale: 1.0,
            translation: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul(&self.rotation)?;
        let d = self.dim();
        for row in y.as_mut_slice().chunks_exact_mut(d) {
            for (v, t) in row.iter_mut().zip(&self.translation) {
                *v = self.scale * *v + t;
            }
        }
        Ok(y)
    }

    /// Root-mean-square distance between transformed `source` rows and
    /// `target` rows.
    pub fn residual(&self, source: &DenseMatrix, target: &DenseMatrix) -> Result<f64> {
        let y = self.apply(source)?;
        if y.shape() != target.shape() {
            return Err(GraeError::shape("residual operands differ in shape"));
        }
        let total: f64 = (0..y.rows()).map(|i| sq_dist(y.row(i), target.row(i))).sum();
        Ok((total / y.rows().max(1) as f64).sqrt())
    }

    /// `other ∘ self`: apply `self`, then `other`.
    pub fn then(&self, other: &SimilarityTransform) -> Result<SimilarityTransform> {
        let rotation = self.rotation.matmul(&other.rotation)?;
        let t = DenseMatrix::from_vec(1, self.dim(), self.translation.clone())?;
        let moved = other.apply(&t)?;
        Ok(SimilarityTransform {
            rotation,
            scale: self.scale * other.scale,
            translation: moved.row(0).to_vec(),
        })
    }
}

/// Least-squares similarity transform taking `source` onto `target`
/// (reflections allowed).
pub fn procrustes(source: &DenseMatrix, target: &DenseMatrix) -> Result<SimilarityTransform> {
    if source.shape() != target.shape() {
        return Err(GraeError::shape(format!(
            "source {:?} vs target {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let (n, d) = source.shape();
    if d == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    if n < d + 1 {
        return Err(GraeError::invalid(format!(
            "Procrustes needs at least {} rows, got {n}",
            d + 1
        )));
    }
    let mut a = source.clone();
    let mu_a = a.center_columns();
    let mut b = target.clone();
    let mu_b = b.center_columns();
    let norm_a: f64 = a.as_slice().iter().map(|v| v * v).sum();
    if !(norm_a > 0.0) {
        return Err(GraeError::Degenerate(
            "source points coincide after centering".into(),
        ));
    }
    // polar factor of M = AᵀB: with MᵀM = V·Σ²·Vᵀ, U = M·V·Σ⁻¹ and R = U·Vᵀ
    let m = a.t_matmul(&b)?;
    let mtm = m.t_matmul(&m)?;
    let eig = symmetric_eigen(&mtm)?;
    let tol = 1e-12 * eig.values[0].max(0.0).sqrt().max(f64::MIN_POSITIVE);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut sigma_sum = 0.0;
    for k in 0..d {
        let v = eig.vector(k);
        let sigma = eig.values[k].max(0.0).sqrt();
        if sigma > tol {
            let mv = m.matvec(&v);
            u_cols.push(mv.iter().map(|x| x / sigma).collect());
            sigma_sum += sigma;
        } else {
            u_cols.push(complete_basis(&u_cols, d));
        }
        v_cols.push(v);
    }
    let rotation = DenseMatrix::from_fn(d, d, |i, j| (0..d).map(|k| u_cols[k][i] * v_cols[k][j]).sum());
    let scale = sigma_sum / norm_a;
    if !(scale > 0.0) {
        return Err(GraeError::Degenerate(
            "source and target are uncorrelated; no positive scale".into(),
        ));
    }
    let mu_rot = DenseMatrix::from_vec(1, d, mu_a)?.matmul(&rotation)?;
    let translation = (0..d).map(|j| mu_b[j] - scale * mu_rot[(0, j)]).collect();
    Ok(SimilarityTransform {
        rotation,
        scale,
        translation,
    })
}

/// A unit vector orthogonal to all of `basis`.
fn complete_basis(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    for e in 0..d {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
    unreachable!("fewer than d basis vectors always leave a complement")
}

/// Largest pairwise distance.
pub fn diameter(x: &DenseMatrix) -> f64 {
    let n = x.rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| sq_dist(x.row(i), x.row(j)))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Per-batch alignment diagnostics.
#[derive(Clone, Debug)]
pub struct StitchReport {
    pub transforms: Vec<SimilarityTransform>,
    /// RMS anchor residual of each batch after alignment (0 for batch 0).
    pub anchor_residuals: Vec<f64>,
    pub reference_diameter: f64,
}

/// Aligns every batch onto batch 0 using the anchor rows and merges them in
/// original row order. Anchor coordinates are the mean of their aligned
/// copies.
pub fn stitch_embeddings(plan: &StitchPlan, batches: &[Embedding]) -> Result<Embedding> {
    stitch_with_report(plan, batches, RESIDUAL_WARN_FRACTION).map(|(e, _)| e)
}

pub fn stitch_with_report(
    plan: &StitchPlan,
    batches: &[Embedding],
    warn_fraction: f64,
) -> Result<(Embedding, StitchReport)> {
    if batches.len() != plan.batch_count() {
        return Err(GraeError::shape(format!(
            "{} batch embeddings for {} batches",
            batches.len(),
            plan.batch_count()
        )));
    }
    let d = batches[0].dim();
    for (k, (e, idx)) in batches.iter().zip(&plan.batches).enumerate() {
        if e.dim() != d || e.len() != idx.len() {
            return Err(GraeError::shape(format!(
                "batch {k}: embedding is {}x{}, plan has {} rows of dimension {d}",
                e.len(),
                e.dim(),
                idx.len()
            )));
        }
    }
    let a = plan.anchor_count();
    let anchor_rows: Vec<usize> = (0..a).collect();
    let ref_anchors = batches[0].coords.select_rows(&anchor_rows);
    let ref_diam = diameter(&batches[0].coords);

    let mut out = DenseMatrix::zeros(plan.n, d);
    let mut transforms = Vec::with_capacity(batches.len());
    let mut residuals = Vec::with_capacity(batches.len());
    for (k, (e, idx)) in batches.iter().zip(&plan.batches).enumerate() {
        let (aligned, tf, res) = if k == 0 {
            (e.coords.clone(), SimilarityTransform::identity(d), 0.0)
        } else {
            let src = e.coords.select_rows(&anchor_rows);
            let tf = procrustes(&src, &ref_anchors)?;
            let res = tf.residual(&src, &ref_anchors)?;
            if res > warn_fraction * ref_diam {
                warn!(
                    "batch {k}: anchor residual {res:.4e} exceeds {:.0}% of the reference diameter {ref_diam:.4e}",
                    100.0 * warn_fraction
                );
            }
            (tf.apply(&e.coords)?, tf, res)
        };
        for (r, &i) in idx.iter().enumerate() {
            let dst = out.row_mut(i);
            let src = aligned.row(r);
            if r < a {
                dst.iter_mut().zip(src).for_each(|(o, s)| *o += s);
            } else {
                dst.copy_from_slice(src);
            }
        }
        transforms.push(tf);
        residuals.push(res);
    }
    let inv = 1.0 / batches.len() as f64;
    for &i in &plan.anchor_indices {
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    if !out.all_finite() {
        return Err(GraeError::Numeric("stitched embedding is not finite".into()));
    }
    let emb = Embedding {
        coords: out,
        source: EmbeddingSource::Stitched,
        seed: batches[0].seed,
        stress: 0.0,
    };
    Ok((
        emb,
        StitchReport {
            transforms,
            anchor_residuals: residuals,
            reference_diameter: ref_diam,
        },
    ))
}

/// Reference embedding of each batch, computed in parallel. Batch `k` uses
/// a seed derived from `seed` and `k`.
pub fn embed_batches(
    features: &DenseMatrix,
    plan: &StitchPlan,
    diffusion: &DiffusionParams,
    mds: &MdsParams,
    seed: u64,
) -> Result<Vec<Embedding>> {
    if features.rows() != plan.n {
        return Err(GraeError::shape(format!(
            "plan covers {} rows, features have {}",
            plan.n,
            features.rows()
        )));
    }
    plan.batches
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            let x = features.select_rows(idx);
            reference_embed(&x, diffusion, mds, derive_seed(seed, k as u64)).map(|r| r.embedding)
        })
        .collect()
}

/// Batch, embed and stitch in one call.
pub fn stitched_reference_embed(
    features: &DenseMatrix,
    plan: &StitchPlan,
    diffusion: &DiffusionParams,
    mds: &MdsParams,
    seed: u64,
) -> Result<Embedding> {
    let batches = embed_batches(features, plan, diffusion, mds, seed)?;
    let mut e = stitch_embeddings(plan, &batches)?;
    e.seed = seed;
    Ok(e)
}

pub fn save_plan(dir: &Path, plan: &StitchPlan) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("plan.txt"), plan.to_manifest())?;
    Ok(())
}

pub fn load_plan(dir: &Path) -> Result<StitchPlan> {
    let path = dir.join("plan.txt");
    let text = fs::read_to_string(&path)?;
    StitchPlan::from_manifest(&text).map_err(|e| match e {
        GraeError::Parse { message, .. } => GraeError::Parse { path, message },
        other => other,
    })
}

/// Batch `k`'s embedding file inside a plan directory. Rows follow the
/// batch's order in the plan.
pub fn batch_path(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join(format!("batch_{k:03}.csv"))
}

pub fn save_batches(dir: &Path, batches: &[Embedding]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, e) in batches.iter().enumerate() {
        e.write_csv(&batch_path(dir, k))?;
    }
    Ok(())
}

pub fn load_batches(dir: &Path, plan: &StitchPlan) -> Result<Vec<Embedding>> {
    (0..plan.batch_count())
        .map(|k| Embedding::read_csv(&batch_path(dir, k), EmbeddingSource::Mds))
        .collect()
}
