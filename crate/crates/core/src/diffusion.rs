//! Diffusion geometry: adaptive α-decay kernel, Markov operator, von Neumann
//! entropy for picking the diffusion time, and potential distances.

use log::warn;

use crate::error::{GraeError, Result};
use crate::matrix::{sq_dist, DenseMatrix};
use crate::numerics::{pairwise_sq_distances, symmetric_eigenvalues, symmetric_from_upper};

/// Knee rule used to read the diffusion time off the entropy curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KneeStrategy {
    /// `argmax_t  H(t−1) − 2H(t) + H(t+1)` over interior `t`.
    #[default]
    SecondDifference,
    /// Breakpoint minimizing the squared error of a two-segment linear fit.
    TwoLine,
}

impl KneeStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "second_difference" => Some(KneeStrategy::SecondDifference),
            "two_line" => Some(KneeStrategy::TwoLine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KneeStrategy::SecondDifference => "second_difference",
            KneeStrategy::TwoLine => "two_line",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionParams {
    pub knn_k: usize,
    pub decay_alpha: f64,
    pub t_max: usize,
    pub log_floor: f64,
    pub knee: KneeStrategy,
    /// Fixed diffusion time; skips the entropy-based selection when set.
    pub t_override: Option<usize>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            knn_k: 5,
            decay_alpha: 40.0,
            t_max: 100,
            log_floor: 1e-7,
            knee: KneeStrategy::SecondDifference,
            t_override: None,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(GraeError::invalid("knn_k must be >= 1"));
        }
        if !(self.decay_alpha > 0.0) {
            return Err(GraeError::invalid("decay_alpha must be > 0"));
        }
        if self.t_max < 3 {
            return Err(GraeError::invalid("t_max must be >= 3"));
        }
        if !(self.log_floor > 0.0) {
            return Err(GraeError::invalid("log_floor must be > 0"));
        }
        if self.t_override == Some(0) {
            return Err(GraeError::invalid("diffusion time must be >= 1"));
        }
        Ok(())
    }
}

/// Every intermediate of the diffusion pipeline.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    /// Symmetric α-decay affinities.
    pub kernel: DenseMatrix,
    /// Row-stochastic diffusion operator.
    pub operator: DenseMatrix,
    pub bandwidths: Vec<f64>,
    pub knn_k: usize,
    pub decay_alpha: f64,
    /// Chosen diffusion time.
    pub t: usize,
    /// Entropy at `t = 1..=t_max`; index 0 holds `t = 1`.
    pub vne_curve: Vec<f64>,
    /// Eigenvalues of the operator, descending.
    pub spectrum: Vec<f64>,
    /// Potential distances at the chosen time.
    pub potential: DenseMatrix,
}

/// Distance from every point to its `k`-th nearest neighbor (self excluded).
///
/// Zero bandwidths (duplicates up to the `k`-th neighbor) are replaced by the
/// smallest positive bandwidth in the dataset.
pub fn knn_bandwidths(sq_dists: &DenseMatrix, k: usize) -> Result<Vec<f64>> {
    let n = sq_dists.rows();
    if !sq_dists.is_square() {
        return Err(GraeError::NotSquare {
            rows: n,
            cols: sq_dists.cols(),
        });
    }
    if k == 0 || k >= n {
        return Err(GraeError::invalid(format!(
            "knn k = {k} out of range for {n} points"
        )));
    }
    let mut sigmas = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        buf.extend(
            sq_dists
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d),
        );
        let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        sigmas.push(kth.max(0.0).sqrt());
    }
    if sigmas.contains(&0.0) {
        let floor = sigmas
            .iter()
            .copied()
            .filter(|&s| s > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(GraeError::Degenerate(
                "all points coincide: no positive bandwidth".into(),
            ));
        }
        let count = sigmas.iter().filter(|&&s| s == 0.0).count();
        warn!("{count} zero bandwidths from duplicate points replaced by {floor:e}");
        sigmas.iter_mut().filter(|s| **s == 0.0).for_each(|s| *s = floor);
    }
    Ok(sigmas)
}

/// `K_ij = ½·exp(−(d_ij/σ_i)^α) + ½·exp(−(d_ij/σ_j)^α)`.
///
/// Symmetric bitwise and `K_ii = 1`; far-apart entries may underflow to 0.
pub fn alpha_decay_kernel(
    sq_dists: &DenseMatrix,
    sigmas: &[f64],
    decay_alpha: f64,
) -> Result<DenseMatrix> {
    let n = sq_dists.rows();
    if !sq_dists.is_square() || sigmas.len() != n {
        return Err(GraeError::shape(format!(
            "{}x{} distances with {} bandwidths",
            n,
            sq_dists.cols(),
            sigmas.len()
        )));
    }
    if !(decay_alpha > 0.0) {
        return Err(GraeError::invalid("decay_alpha must be > 0"));
    }
    if sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(GraeError::invalid("bandwidths must be > 0"));
    }
    let half_alpha = decay_alpha / 2.0;
    let mut k = symmetric_from_upper(n, |i, j| {
        let d2 = sq_dists[(i, j)];
        // (d/σ)^α == (d²/σ²)^(α/2)
        let a = (-(d2 / (sigmas[i] * sigmas[i])).powf(half_alpha)).exp();
        let b = (-(d2 / (sigmas[j] * sigmas[j])).powf(half_alpha)).exp();
        0.5 * a + 0.5 * b
    });
    for i in 0..n {
        k[(i, i)] = 1.0;
    }
    Ok(k)
}

/// Divides every row by its sum.
pub fn row_normalize(kernel: &DenseMatrix) -> Result<DenseMatrix> {
    let mut p = kernel.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let s: f64 = row.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(GraeError::IsolatedPoint(i));
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(p)
}

/// `D^{-1/2} K D^{-1/2}` with `D` the kernel row sums. Similar to the
/// diffusion operator, so it shares its spectrum, but symmetric.
pub fn symmetric_conjugate(kernel: &DenseMatrix) -> Result<DenseMatrix> {
    let n = kernel.rows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let s: f64 = kernel.row(i).iter().sum();
        if !(s > 0.0) {
            return Err(GraeError::IsolatedPoint(i));
        }
        inv_sqrt.push(1.0 / s.sqrt());
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = inv_sqrt[i] * kernel[(i, j)] * inv_sqrt[j];
        }
    }
    // exact symmetry for the eigensolver
    for i in 0..n {
        for j in (i + 1)..n {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

/// Spectrum of the diffusion operator built from `kernel`, descending.
pub fn operator_spectrum(kernel: &DenseMatrix) -> Result<Vec<f64>> {
    symmetric_eigenvalues(&symmetric_conjugate(kernel)?)
}

/// Shannon entropy of the normalized `t`-th powers of the spectrum, after
/// clipping eigenvalues into `[0, 1]`.
pub fn von_neumann_entropy(p_spectrum: &[f64], t: usize) -> Result<f64> {
    let powered: Vec<f64> = p_spectrum
        .iter()
        .map(|&l| l.clamp(0.0, 1.0))
        .filter(|&l| l > 0.0)
        .map(|l| l.powi(t as i32))
        .collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0) {
        return Err(GraeError::Degenerate(
            "spectrum is zero after clipping".into(),
        ));
    }
    Ok(-powered
        .iter()
        .map(|&p| p / total)
        .filter(|&mu| mu > 0.0)
        .map(|mu| mu * mu.ln())
        .sum::<f64>())
}

/// Entropy curve for `t = 1..=t_max` and the diffusion time at its knee.
pub fn select_t(
    p_spectrum: &[f64],
    t_max: usize,
    strategy: KneeStrategy,
) -> Result<(usize, Vec<f64>)> {
    if t_max < 3 {
        return Err(GraeError::invalid(format!("t_max must be >= 3, got {t_max}")));
    }
    let curve = (1..=t_max)
        .map(|t| von_neumann_entropy(p_spectrum, t))
        .collect::<Result<Vec<f64>>>()?;
    let hi = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo < 1e-12 {
        warn!("flat von Neumann entropy curve; using t = 1");
        return Ok((1, curve));
    }
    let t = match strategy {
        KneeStrategy::SecondDifference => second_difference_knee(&curve),
        KneeStrategy::TwoLine => two_line_knee(&curve),
    };
    Ok((t, curve))
}

/// `curve[0]` is `t = 1`. Ties go to the smallest `t`.
pub fn second_difference_knee(curve: &[f64]) -> usize {
    let mut best_t = 2;
    let mut best = f64::NEG_INFINITY;
    for idx in 1..curve.len() - 1 {
        let d2 = curve[idx - 1] - 2.0 * curve[idx] + curve[idx + 1];
        if d2 > best {
            best = d2;
            best_t = idx + 1;
        }
    }
    best_t
}

/// Two least-squares lines, one through `t ≤ b` and one through `t ≥ b`;
/// the knee is the `b` with the smallest combined residual.
pub fn two_line_knee(curve: &[f64]) -> usize {
    let n = curve.len();
    let xs: Vec<f64> = (1..=n).map(|t| t as f64).collect();
    let mut best_t = 2;
    let mut best = f64::INFINITY;
    for b in 1..n - 1 {
        let err = line_fit_sse(&xs[..=b], &curve[..=b]) + line_fit_sse(&xs[b..], &curve[b..]);
        if err < best {
            best = err;
            best_t = b + 1;
        }
    }
    best_t
}

fn line_fit_sse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum()
}

/// `P^t` by binary powering (repeated squaring and multiplication).
pub fn matrix_power(operator: &DenseMatrix, t: usize) -> Result<DenseMatrix> {
    if !operator.is_square() {
        return Err(GraeError::NotSquare {
            rows: operator.rows(),
            cols: operator.cols(),
        });
    }
    if t == 0 {
        return Ok(DenseMatrix::identity(operator.rows()));
    }
    let mut result: Option<DenseMatrix> = None;
    let mut base = operator.clone();
    let mut e = t;
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.matmul(&base)?,
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.matmul(&base)?;
    }
    Ok(result.expect("t >= 1"))
}

/// `D′_t[i][j] = ‖U_i − U_j‖₂` with `U = −ln(max(P^t, log_floor))`.
pub fn potential_distances(
    operator: &DenseMatrix,
    t: usize,
    log_floor: f64,
) -> Result<DenseMatrix> {
    if t == 0 {
        return Err(GraeError::invalid("diffusion time must be >= 1"));
    }
    if !(log_floor > 0.0) {
        return Err(GraeError::invalid("log_floor must be > 0"));
    }
    let mut pt = matrix_power(operator, t)?;
    pt.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = -(x.max(log_floor)).ln());
    let n = pt.rows();
    Ok(symmetric_from_upper(n, |i, j| sq_dist(pt.row(i), pt.row(j)).sqrt()))
}

/// Features → kernel → operator → entropy-selected `t` → potential distances.
pub fn build_diffusion_model(
    features: &DenseMatrix,
    params: &DiffusionParams,
) -> Result<DiffusionModel> {
    params.validate()?;
    let n = features.rows();
    if n < params.knn_k + 1 {
        return Err(GraeError::invalid(format!(
            "{n} points is too few for knn_k = {}",
            params.knn_k
        )));
    }
    let sq = pairwise_sq_distances(features)?;
    let bandwidths = knn_bandwidths(&sq, params.knn_k)?;
    let kernel = alpha_decay_kernel(&sq, &bandwidths, params.decay_alpha)?;
    drop(sq);
    let operator = row_normalize(&kernel)?;
    let spectrum = operator_spectrum(&kernel)?;
    let (selected, vne_curve) = select_t(&spectrum, params.t_max, params.knee)?;
    let t = params.t_override.unwrap_or(selected);
    let potential = potential_distances(&operator, t, params.log_floor)?;
    Ok(DiffusionModel {
        kernel,
        operator,
        bandwidths,
        knn_k: params.knn_k,
        decay_alpha: params.decay_alpha,
        t,
        vne_curve,
        spectrum,
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn line_points(xs: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(xs.len(), 1, |i, _| xs[i])
    }

    fn random_points(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.random::<f64>())
    }

    #[test]
    fn bandwidths_collinear() {
        let sq = pairwise_sq_distances(&line_points(&[0.0, 1.0, 3.0])).unwrap();
        assert_eq!(knn_bandwidths(&sq, 1).unwrap(), vec![1.0, 1.0, 2.0]);
        // k = n − 1 gives the farthest point
        assert_eq!(knn_bandwidths(&sq, 2).unwrap(), vec![3.0, 2.0, 3.0]);
        assert!(knn_bandwidths(&sq, 0).is_err());
        assert!(knn_bandwidths(&sq, 3).is_err());
    }

    #[test]
    fn bandwidths_match_sorted_rows() {
        let pts = random_points(20, 3, 1);
        let sq = pairwise_sq_distances(&pts).unwrap();
        let got = knn_bandwidths(&sq, 5).unwrap();
        for i in 0..20 {
            let mut row: Vec<f64> = (0..20)
                .filter(|&j| j != i)
                .map(|j| {
                    (0..3)
                        .map(|c| (pts[(i, c)] - pts[(j, c)]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            row.sort_by(|a, b| a.total_cmp(b));
            assert!((got[i] - row[4]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_get_floor_bandwidth() {
        let sq = pairwise_sq_distances(&line_points(&[0.0, 0.0, 2.0, 5.0])).unwrap();
        let s = knn_bandwidths(&sq, 1).unwrap();
        assert_eq!(s, vec![2.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn kernel_values() {
        let sq = DenseMatrix::from_rows(&[[0.0, 4.0], [4.0, 0.0]]).unwrap();
        let k = alpha_decay_kernel(&sq, &[2.0, 2.0], 3.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        // large α with d < σ on both sides
        let k = alpha_decay_kernel(&sq, &[2.5, 3.0], 200.0).unwrap();
        assert!((k[(0, 1)] - 1.0).abs() < 1e-6);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn normalize_rows() {
        let p = row_normalize(&DenseMatrix::filled(2, 2, 1.0)).unwrap();
        assert_eq!(p.as_slice(), &[0.5; 4]);
        let p = row_normalize(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(p, DenseMatrix::identity(3));
        let k = random_points(6, 6, 3);
        let p = row_normalize(&k).unwrap();
        for r in p.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut z = DenseMatrix::identity(2);
        z[(1, 1)] = 0.0;
        assert_eq!(
            row_normalize(&z).unwrap_err().to_string(),
            "isolated point 1: kernel row sums to zero"
        );
    }

    #[test]
    fn entropy_cases() {
        let h = von_neumann_entropy(&[1.0; 4], 7).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert_eq!(von_neumann_entropy(&[1.0, 0.0, 0.0], 3).unwrap(), 0.0);
        let h = von_neumann_entropy(&[1.0, 0.5, 0.25], 2).unwrap();
        let w = [1.0, 0.25, 0.0625];
        let z: f64 = w.iter().sum();
        let want: f64 = -w.iter().map(|x| (x / z) * (x / z).ln()).sum::<f64>();
        assert!((h - want).abs() < 1e-14);
        assert!(von_neumann_entropy(&[0.0, -0.3], 1).is_err());
    }

    #[test]
    fn flat_curve_selects_one() {
        let (t, curve) = select_t(&[1.0; 5], 10, KneeStrategy::SecondDifference).unwrap();
        assert_eq!(t, 1);
        assert_eq!(curve.len(), 10);
        assert!(select_t(&[1.0; 5], 2, KneeStrategy::SecondDifference).is_err());
    }

    #[test]
    fn knee_matches_brute_force_scan() {
        let mut spec = vec![1.0, 0.9, 0.5];
        spec.extend(std::iter::repeat_n(0.1, 18));
        let (t, curve) = select_t(&spec, 50, KneeStrategy::SecondDifference).unwrap();
        let mut best = (f64::NEG_INFINITY, 0);
        for tt in 2..50usize {
            let h = |s: usize| von_neumann_entropy(&spec, s).unwrap();
            let d2 = h(tt - 1) - 2.0 * h(tt) + h(tt + 1);
            if d2 > best.0 {
                best = (d2, tt);
            }
        }
        assert_eq!(t, best.1);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn convex_curve_knee_is_second_difference_argmax() {
        let curve: Vec<f64> = (1..=10).map(|t| 1.0 / t as f64).collect();
        assert_eq!(second_difference_knee(&curve), 2);
        let elbow = [10.0, 5.0, 1.0, 0.9, 0.8, 0.7, 0.6];
        assert_eq!(second_difference_knee(&elbow), 3);
        assert_eq!(two_line_knee(&elbow), 3);
    }

    #[test]
    fn potential_identity_operator() {
        let d = potential_distances(&DenseMatrix::identity(3), 1, 1e-7).unwrap();
        let want = 2f64.sqrt() * (1e-7f64).ln().abs();
        for i in 0..3 {
            assert_eq!(d[(i, i)], 0.0);
            for j in 0..3 {
                if i != j {
                    assert!((d[(i, j)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn power_matches_repeated_product() {
        let p = row_normalize(&random_points(7, 7, 5)).unwrap();
        let mut naive = p.clone();
        for _ in 1..11 {
            naive = naive.matmul(&p).unwrap();
        }
        assert!(matrix_power(&p, 11).unwrap().max_abs_diff(&naive) < 1e-14);
    }

    #[test]
    fn model_on_points_with_duplicates() {
        let mut pts = random_points(40, 2, 8);
        let dup = pts.row(3).to_vec();
        pts.row_mut(10).copy_from_slice(&dup);
        let params = DiffusionParams {
            t_max: 30,
            ..Default::default()
        };
        let m = build_diffusion_model(&pts, &params).unwrap();
        assert_eq!(m.potential[(3, 10)], 0.0);
        for r in m.operator.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert!((1..=30).contains(&m.t));
        assert!((m.spectrum[0] - 1.0).abs() < 1e-8);
    }
}
