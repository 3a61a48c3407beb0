//! Dense linear algebra used throughout the crate.
//!
//! Three symmetric eigen-solvers live here, each for a different job:
//!
//! * [`symmetric_eigen`]: cyclic Jacobi, full decomposition. Accurate and
//!   simple; used for small matrices (Procrustes blocks, Lanczos projections).
//! * [`symmetric_eigenvalues`]: Householder tridiagonalization followed by
//!   implicit QL. Spectrum only, `O(n³)` with a small constant; used for the
//!   diffusion-operator spectrum at a few thousand points.
//! * [`top_eigenpairs`]: Lanczos with full reorthogonalization for the
//!   leading `k` eigenpairs (classical MDS).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GraeError, Result};
use crate::matrix::{dot, sq_dist, DenseMatrix};

/// Relative tolerance for the symmetry precondition of the eigen-solvers.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_distances(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    Ok(symmetric_from_upper(a.rows(), |i, j| sq_dist(a.row(i), a.row(j))))
}

/// Fills an `n×n` symmetric matrix with zero diagonal from `f(i, j)`, `i < j`.
pub(crate) fn symmetric_from_upper<F>(n: usize, f: F) -> DenseMatrix
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
        .collect();
    let mut out = DenseMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `values`.
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// `V · diag(λ) · Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.vectors.rows();
        let k = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for j in 0..k {
                scaled[(i, j)] *= self.values[j];
            }
        }
        scaled
            .matmul(&self.vectors.transpose())
            .expect("square factors")
    }
}

fn check_symmetric(s: &DenseMatrix) -> Result<()> {
    if !s.is_square() {
        return Err(GraeError::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    if s.rows() == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_TOL * s.max_abs().max(1.0) {
        return Err(GraeError::Asymmetric(asym));
    }
    Ok(())
}

/// Full eigen-decomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-11 · ‖s‖_F`. Eigenvector signs are fixed so the largest-magnitude
/// component of each vector is positive.
pub fn symmetric_eigen(s: &DenseMatrix) -> Result<SymmetricEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut a = s.clone();
    // exact symmetrization so rotations see one value per pair
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let norm = a.frobenius_norm();
    let target = 1e-11 * norm;

    const MAX_SWEEPS: usize = 100;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= target || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let np = c * akp - sn * akq;
                    let nq = sn * akp + c * akq;
                    a[(k, p)] = np;
                    a[(p, k)] = np;
                    a[(k, q)] = nq;
                    a[(q, k)] = nq;
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > target {
        return Err(GraeError::Numeric(
            "Jacobi eigensolver did not converge".into(),
        ));
    }

    let values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    Ok(sorted_eigen(values, &v))
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Orders eigenpairs by descending value and normalizes vector signs.
fn sorted_eigen(values: Vec<f64>, vectors: &DenseMatrix) -> SymmetricEigen {
    let n = vectors.rows();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[y].total_cmp(&values[x]));
    let mut out = DenseMatrix::zeros(n, order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vectors.column(src);
        normalize_sign(&mut col);
        out.set_column(dst, &col);
    }
    SymmetricEigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: out,
    }
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).copied().unwrap_or(0.0) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// All eigenvalues of a symmetric matrix, descending.
///
/// Householder reduction to tridiagonal form (lower triangle, row-major
/// access only) followed by the implicit QL algorithm with Wilkinson-style
/// shifts.
pub fn symmetric_eigenvalues(s: &DenseMatrix) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    let mut a = s.clone();
    let (mut d, mut e) = tridiagonalize(&mut a);
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Reduces the lower triangle of `a` in place. Returns the diagonal and the
/// subdiagonal, where `e[i]` couples rows `i - 1` and `i` and `e[0] = 0`.
fn tridiagonalize(a: &mut DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: f64 = a.row(i)[..=l].iter().map(|x| x.abs()).sum();
            if scale == 0.0 {
                e[i] = a[(i, l)];
            } else {
                let row = a.row(i);
                for k in 0..=l {
                    u[k] = row[k] / scale;
                }
                let mut h: f64 = u[..=l].iter().map(|x| x * x).sum();
                let f = u[l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                u[l] = f - g;

                // p = A_sub · u, touching only the stored lower triangle
                p[..=l].iter_mut().for_each(|x| *x = 0.0);
                for j in 0..=l {
                    let row = &a.row(j)[..=j];
                    let uj = u[j];
                    let (lower, diag) = row.split_at(j);
                    let s = dot8(lower, &u[..j]) + diag[0] * uj;
                    for (pk, &ajk) in p[..j].iter_mut().zip(lower) {
                        *pk += ajk * uj;
                    }
                    p[j] += s;
                }
                for x in p[..=l].iter_mut() {
                    *x /= h;
                }
                let kk = dot(&u[..=l], &p[..=l]) / (2.0 * h);
                for k in 0..=l {
                    p[k] -= kk * u[k];
                }
                // A_sub -= u qᵀ + q uᵀ   (q stored in p)
                for j in 0..=l {
                    let uj = u[j];
                    let qj = p[j];
                    let row = &mut a.row_mut(j)[..=j];
                    for ((x, &uk), &qk) in row.iter_mut().zip(&u[..=j]).zip(&p[..=j]) {
                        *x -= uj * qk + qj * uk;
                    }
                }
            }
        } else {
            e[i] = a[(i, l)];
        }
        d[i] = a[(i, i)];
    }
    if n > 0 {
        d[0] = a[(0, 0)];
    }
    (d, e)
}

#[inline]
fn dot8(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Implicit QL on a symmetric tridiagonal matrix (eigenvalues only).
/// On return `d` holds the eigenvalues in no particular order.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n < 2 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(GraeError::Numeric(
                    "tridiagonal QL did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// The `k` algebraically largest eigenpairs of a symmetric matrix.
///
/// Lanczos with full (double) reorthogonalization; the Krylov dimension
/// grows until every requested Ritz pair has residual below
/// `1e-10 · ‖s‖`, and at dimension `n` the result is exact.
pub fn top_eigenpairs(s: &DenseMatrix, k: usize) -> Result<SymmetricEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    if k == 0 || k > n {
        return Err(GraeError::invalid(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    if n <= 64 {
        let full = symmetric_eigen(s)?;
        let vectors = DenseMatrix::from_fn(n, k, |i, j| full.vectors[(i, j)]);
        return Ok(SymmetricEigen {
            values: full.values[..k].to_vec(),
            vectors,
        });
    }
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    let mut m = n.min((2 * k + 40).max(60));
    loop {
        let (values, vectors, residuals) = lanczos(s, k, m)?;
        let norm = values
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(scale * 1e-300);
        let ok = residuals.iter().all(|&r| r <= 1e-10 * norm.max(scale));
        if ok || m == n {
            return Ok(sorted_eigen(values, &vectors));
        }
        m = n.min(m * 2);
    }
}

type RitzPairs = (Vec<f64>, DenseMatrix, Vec<f64>);

fn lanczos(s: &DenseMatrix, k: usize, m: usize) -> Result<RitzPairs> {
    let n = s.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_705e_ed00_0001);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);

    let fresh = |rng: &mut ChaCha8Rng, basis: &[Vec<f64>]| -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            reorthogonalize(&mut v, basis);
            reorthogonalize(&mut v, basis);
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                return Some(v);
            }
        }
        None
    };

    let mut q = fresh(&mut rng, &basis).ok_or_else(|| GraeError::Numeric("Lanczos start".into()))?;
    let mut last_beta = 0.0;
    for j in 0..m {
        let mut w = s.matvec(&q);
        let a = dot(&w, &q);
        alpha.push(a);
        basis.push(q);
        reorthogonalize(&mut w, &basis);
        reorthogonalize(&mut w, &basis);
        let b = dot(&w, &w).sqrt();
        if j + 1 == m {
            last_beta = b;
            break;
        }
        if b <= 1e-12 * s.max_abs().max(f64::MIN_POSITIVE) {
            // invariant subspace: restart in the orthogonal complement
            match fresh(&mut rng, &basis) {
                Some(v) => {
                    beta.push(0.0);
                    q = v;
                }
                None => break,
            }
        } else {
            beta.push(b);
            q = w.into_iter().map(|x| x / b).collect();
        }
    }
    let dim = basis.len();
    let mut t = DenseMatrix::zeros(dim, dim);
    for i in 0..dim {
        t[(i, i)] = alpha[i];
        if i + 1 < dim {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let small = symmetric_eigen(&t)?;
    let take = k.min(dim);
    let mut vectors = DenseMatrix::zeros(n, take);
    let mut residuals = Vec::with_capacity(take);
    for c in 0..take {
        let y = small.vector(c);
        let mut x = vec![0.0; n];
        for (yi, qi) in y.iter().zip(&basis) {
            for (xv, qv) in x.iter_mut().zip(qi) {
                *xv += yi * qv;
            }
        }
        let nx = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        vectors.set_column(c, &x);
        residuals.push((last_beta * y[dim - 1]).abs());
    }
    Ok((small.values[..take].to_vec(), vectors, residuals))
}

fn reorthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

/// Ordinary least squares `argmin ‖design·β − targets‖²` for every target
/// column, via ridge-jittered normal equations.
///
/// The jitter `1e-10 · trace(XᵀX) / cols` keeps the Cholesky factorization
/// defined for near-degenerate designs; a few steps of iterative refinement
/// against the unjittered system then remove its bias on well-posed
/// problems.
pub fn least_squares(design: &DenseMatrix, targets: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols) = design.shape();
    if rows == 0 || cols == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    if targets.rows() != rows {
        return Err(GraeError::shape(format!(
            "design has {rows} rows but targets have {}",
            targets.rows()
        )));
    }
    if rows < cols {
        return Err(GraeError::invalid(format!(
            "least squares needs at least {cols} rows, got {rows}"
        )));
    }
    let gram = design.t_matmul(design)?;
    let rhs = design.t_matmul(targets)?;
    let trace = gram.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(GraeError::SingularDesign);
    }
    let jitter = 1e-10 * trace / cols as f64;
    let mut jittered = gram.clone();
    for i in 0..cols {
        jittered[(i, i)] += jitter;
    }
    let chol = cholesky(&jittered).ok_or(GraeError::SingularDesign)?;

    let mut beta = DenseMatrix::zeros(cols, targets.cols());
    for c in 0..targets.cols() {
        let b = rhs.column(c);
        let mut x = cholesky_solve(&chol, &b);
        for _ in 0..3 {
            let gx = gram.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&gx).map(|(bi, gi)| bi - gi).collect();
            let dx = cholesky_solve(&chol, &r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GraeError::SingularDesign);
        }
        beta.set_column(c, &x);
    }
    Ok(beta)
}

fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}
