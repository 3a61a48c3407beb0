//! Metric multidimensional scaling: classical MDS for initialization and
//! SMACOF stress majorization, composed with the diffusion pipeline into
//! the reference embedding.

use crate::diffusion::{build_diffusion_model, DiffusionModel, DiffusionParams};
use std::path::Path;

use crate::error::{GraeError, Result};
use crate::io::{load_matrix_csv, save_matrix_csv};
use crate::matrix::{sq_dist, DenseMatrix};
use crate::numerics::top_eigenpairs;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    Mds,
    Stitched,
    Encoder,
}

impl EmbeddingSource {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingSource::Mds => "mds",
            EmbeddingSource::Stitched => "stitched",
            EmbeddingSource::Encoder => "encoder",
        }
    }
}

/// Latent coordinates plus where they came from.
#[derive(Clone, Debug)]
pub struct Embedding {
    /// `n×d` coordinates.
    pub coords: DenseMatrix,
    pub source: EmbeddingSource,
    pub seed: u64,
    /// Normalized stress against the distances it was fit to (0 if unknown).
    pub stress: f64,
}

impl Embedding {
    pub fn new(coords: DenseMatrix, source: EmbeddingSource, seed: u64) -> Self {
        Embedding {
            coords,
            source,
            seed,
            stress: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    /// Writes coordinates as CSV with a `z1,…,zd` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let names: Vec<String> = (1..=self.dim()).map(|k| format!("z{k}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        save_matrix_csv(path, &self.coords, Some(&refs))
    }

    /// Reads coordinates from CSV (header optional).
    pub fn read_csv(path: &Path, source: EmbeddingSource) -> Result<Self> {
        let (coords, _) = load_matrix_csv(path)?;
        if coords.cols() == 0 || coords.rows() == 0 {
            return Err(GraeError::EmptyMatrix);
        }
        if !coords.all_finite() {
            return Err(GraeError::Parse {
                path: path.to_path_buf(),
                message: "non-finite coordinate".into(),
            });
        }
        Ok(Embedding::new(coords, source, 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdsParams {
    pub d: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for MdsParams {
    fn default() -> Self {
        MdsParams {
            d: 2,
            max_iter: 500,
            rel_tol: 1e-6,
        }
    }
}

impl MdsParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(GraeError::invalid("embedding dimension must be >= 1"));
        }
        if self.max_iter == 0 {
            return Err(GraeError::invalid("max_iter must be >= 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(GraeError::invalid("rel_tol must be > 0"));
        }
        Ok(())
    }
}

fn check_distances(distances: &DenseMatrix) -> Result<()> {
    if distances.is_empty() {
        return Err(GraeError::EmptyMatrix);
    }
    if !distances.is_square() {
        return Err(GraeError::NotSquare {
            rows: distances.rows(),
            cols: distances.cols(),
        });
    }
    Ok(())
}

/// `Σ_{i<j}(‖x_i − x_j‖ − δ_ij)² / Σ_{i<j} δ_ij²`.
pub fn normalized_stress(coords: &DenseMatrix, distances: &DenseMatrix) -> f64 {
    let n = coords.rows();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(coords.row(i), coords.row(j)).sqrt();
            let delta = distances[(i, j)];
            num += (d - delta) * (d - delta);
            den += delta * delta;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Torgerson scaling: top-`d` eigenpairs of `−½·J·D²·J`, negative
/// eigenvalues truncated to zero.
pub fn classical_mds(distances: &DenseMatrix, d: usize) -> Result<Embedding> {
    check_distances(distances)?;
    let n = distances.rows();
    if d == 0 || d >= n {
        return Err(GraeError::invalid(format!(
            "classical MDS needs 1 <= d < n (d = {d}, n = {n})"
        )));
    }
    let mut b = DenseMatrix::from_fn(n, n, |i, j| {
        let v = distances[(i, j)];
        -0.5 * v * v
    });
    let row_means: Vec<f64> = b.row_iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    // B is symmetric, so column means equal row means
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    let coords = if b.max_abs() == 0.0 {
        DenseMatrix::zeros(n, d)
    } else {
        let eig = top_eigenpairs(&b, d)?;
        let mut coords = DenseMatrix::zeros(n, d);
        for c in 0..d {
            let scale = eig.values[c].max(0.0).sqrt();
            for i in 0..n {
                coords[(i, c)] = eig.vectors[(i, c)] * scale;
            }
        }
        coords
    };
    let stress = normalized_stress(&coords, distances);
    Ok(Embedding {
        coords,
        source: EmbeddingSource::Mds,
        seed: 0,
        stress,
    })
}

/// Result of a SMACOF run.
#[derive(Clone, Debug)]
pub struct SmacofFit {
    pub embedding: Embedding,
    /// Normalized stress of the initial configuration followed by one entry
    /// per Guttman transform.
    pub stress_history: Vec<f64>,
    pub iterations: usize,
}

/// Unweighted SMACOF from `init`. Stops when the relative stress decrease
/// falls below `rel_tol` or after `max_iter` Guttman transforms.
pub fn smacof(
    distances: &DenseMatrix,
    init: &Embedding,
    max_iter: usize,
    rel_tol: f64,
) -> Result<SmacofFit> {
    check_distances(distances)?;
    let n = distances.rows();
    if init.coords.rows() != n {
        return Err(GraeError::shape(format!(
            "init has {} rows, distances are {n}x{n}",
            init.coords.rows()
        )));
    }
    if !(rel_tol > 0.0) {
        return Err(GraeError::invalid("rel_tol must be > 0"));
    }
    let mut denom = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            denom += distances[(i, j)] * distances[(i, j)];
        }
    }
    if !(denom > 0.0) {
        return Err(GraeError::Degenerate(
            "all off-diagonal target distances are zero".into(),
        ));
    }
    let dim = init.coords.cols();
    let mut x = init.coords.clone();
    let mut bx = DenseMatrix::zeros(n, dim);
    let mut stress = guttman_pass(&x, distances, &mut bx) / denom;
    let mut history = vec![stress];
    let mut iterations = 0;
    while iterations < max_iter {
        // Guttman transform: X ← B(X)·X / n
        x = bx.clone();
        x.scale_in_place(1.0 / n as f64);
        iterations += 1;
        let next = guttman_pass(&x, distances, &mut bx) / denom;
        history.push(next);
        let prev = stress;
        stress = next;
        if prev <= 0.0 || (prev - next) / prev < rel_tol {
            break;
        }
    }
    if !x.all_finite() {
        return Err(GraeError::Numeric("SMACOF produced non-finite coordinates".into()));
    }
    Ok(SmacofFit {
        embedding: Embedding {
            coords: x,
            source: EmbeddingSource::Mds,
            seed: init.seed,
            stress,
        },
        stress_history: history,
        iterations,
    })
}

/// Fills `bx` with `B(X)·X` and returns the raw stress of `X`.
fn guttman_pass(x: &DenseMatrix, distances: &DenseMatrix, bx: &mut DenseMatrix) -> f64 {
    let n = x.rows();
    let dim = x.cols();
    bx.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    let mut raw = 0.0;
    // B_ij = −δ_ij / d_ij for i ≠ j, B_ii = −Σ_j B_ij, so
    // (B·X)_i = Σ_j (δ_ij / d_ij)(x_i − x_j)
    for i in 0..n {
        let xi = x.row(i);
        let di = distances.row(i);
        for j in (i + 1)..n {
            let xj = x.row(j);
            let d = sq_dist(xi, xj).sqrt();
            let delta = di[j];
            raw += (d - delta) * (d - delta);
            if d > 0.0 {
                let w = delta / d;
                for c in 0..dim {
                    let diff = w * (xi[c] - xj[c]);
                    bx[(i, c)] += diff;
                    bx[(j, c)] -= diff;
                }
            }
        }
    }
    raw
}

/// Reference embedding of `features`: diffusion potential distances,
/// classical MDS initialization, then SMACOF.
#[derive(Clone, Debug)]
pub struct ReferenceEmbedding {
    pub embedding: Embedding,
    pub model: DiffusionModel,
    pub stress_history: Vec<f64>,
}

pub fn reference_embed(
    features: &DenseMatrix,
    diffusion: &DiffusionParams,
    mds: &MdsParams,
    seed: u64,
) -> Result<ReferenceEmbedding> {
    mds.validate()?;
    let model = build_diffusion_model(features, diffusion)?;
    let mut init = classical_mds(&model.potential, mds.d)?;
    init.seed = seed;
    let fit = smacof(&model.potential, &init, mds.max_iter, mds.rel_tol)?;
    Ok(ReferenceEmbedding {
        embedding: fit.embedding,
        model,
        stress_history: fit.stress_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pairwise_sq_distances;
    use crate::rng::seeded;
    use rand::Rng;

    fn distances_of(points: &DenseMatrix) -> DenseMatrix {
        let mut d = pairwise_sq_distances(points).unwrap();
        d.as_mut_slice().iter_mut().for_each(|v| *v = v.sqrt());
        d
    }

    fn random_points(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded(seed);
        DenseMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn classical_recovers_planar_distances() {
        let pts = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]]).unwrap();
        let d = distances_of(&pts);
        let e = classical_mds(&d, 2).unwrap();
        assert!(distances_of(&e.coords).max_abs_diff(&d) < 1e-8);
        assert!(e.stress < 1e-16);
    }

    #[test]
    fn classical_random_ten_points() {
        let pts = random_points(10, 4);
        let d = distances_of(&pts);
        let e = classical_mds(&d, 2).unwrap();
        assert!(distances_of(&e.coords).max_abs_diff(&d) < 1e-8);
    }

    #[test]
    fn classical_zero_distances_and_bad_dim() {
        let e = classical_mds(&DenseMatrix::zeros(5, 5), 2).unwrap();
        assert_eq!(e.coords, DenseMatrix::zeros(5, 2));
        assert!(classical_mds(&DenseMatrix::zeros(3, 3), 3).is_err());
    }

    #[test]
    fn smacof_exact_init_stops_immediately() {
        let pts = random_points(8, 2);
        let d = distances_of(&pts);
        let init = Embedding::new(pts, EmbeddingSource::Mds, 0);
        let fit = smacof(&d, &init, 100, 1e-6).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.embedding.stress < 1e-12);
    }

    #[test]
    fn smacof_converges_from_random_init() {
        let pts = random_points(8, 7);
        let d = distances_of(&pts);
        let init = Embedding::new(random_points(8, 99), EmbeddingSource::Mds, 0);
        let fit = smacof(&d, &init, 5000, 1e-12).unwrap();
        assert!(fit.embedding.stress < 1e-6, "stress {}", fit.embedding.stress);
        for w in fit.stress_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn smacof_rejects_degenerate_targets() {
        let init = Embedding::new(random_points(4, 1), EmbeddingSource::Mds, 0);
        assert!(smacof(&DenseMatrix::zeros(4, 4), &init, 10, 1e-6).is_err());
        assert!(smacof(&DenseMatrix::zeros(5, 5), &init, 10, 1e-6).is_err());
    }

    #[test]
    fn classical_permutation_equivariant() {
        let pts = random_points(9, 12);
        let d = distances_of(&pts);
        let perm = [3, 0, 8, 1, 7, 2, 6, 4, 5];
        let dp = DenseMatrix::from_fn(9, 9, |i, j| d[(perm[i], perm[j])]);
        let a = classical_mds(&d, 2).unwrap();
        let b = classical_mds(&dp, 2).unwrap();
        let da = distances_of(&a.coords);
        let db = distances_of(&b.coords);
        let dap = DenseMatrix::from_fn(9, 9, |i, j| da[(perm[i], perm[j])]);
        assert!(dap.max_abs_diff(&db) < 1e-8);
    }

    #[test]
    fn reference_embed_swiss_roll() {
        let ds = crate::datasets::make_swiss_roll(500, 3).unwrap();
        let p = DiffusionParams::default();
        let a = reference_embed(&ds.features, &p, &MdsParams::default(), 3).unwrap();
        for w in a.stress_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(a.embedding.stress.is_finite() && a.embedding.stress >= 0.0);
        for m in a.embedding.coords.column_means() {
            assert!(m.abs() < 1e-9);
        }
        let b = reference_embed(&ds.features, &p, &MdsParams::default(), 3).unwrap();
        assert_eq!(a.embedding.coords, b.embedding.coords);
    }

    #[test]
    fn embedding_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e = Embedding::new(random_points(5, 1), EmbeddingSource::Mds, 0);
        e.write_csv(&path).unwrap();
        let back = Embedding::read_csv(&path, EmbeddingSource::Mds).unwrap();
        assert_eq!(back.coords, e.coords);
    }

    #[test]
    fn smacof_output_is_centered() {
        let pts = random_points(12, 3);
        let d = distances_of(&pts);
        let init = Embedding::new(random_points(12, 4), EmbeddingSource::Mds, 0);
        let fit = smacof(&d, &init, 50, 1e-9).unwrap();
        for m in fit.embedding.coords.column_means() {
            assert!(m.abs() < 1e-9);
        }
    }
}
