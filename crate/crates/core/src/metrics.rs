//! Evaluation: linear-probe R² (planar, circular and per-cluster),
//! reconstruction MSE and MSE relative to a baseline model.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::datasets::{FactorKind, LabeledDataset};
use crate::error::{GraeError, Result};
use crate::matrix::DenseMatrix;
use crate::numerics::least_squares;

/// Grid resolution of the circular alignment search.
pub const CIRCULAR_GRID: usize = 720;

fn r2_of_fit(design: &DenseMatrix, y: &[f64]) -> Result<f64> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst <= 0.0 {
        warn!("constant target column; R² taken as 0");
        return Ok(0.0);
    }
    let targets = DenseMatrix::from_vec(n, 1, y.iter().map(|v| v - mean).collect())?;
    let beta = least_squares(design, &targets)?;
    let fitted = design.matmul(&beta)?;
    let ssr: f64 = (0..n)
        .map(|i| {
            let r = targets[(i, 0)] - fitted[(i, 0)];
            r * r
        })
        .sum();
    Ok(1.0 - ssr / sst)
}

/// Intercept column followed by the centered regressors.
fn design_with_intercept(x: &DenseMatrix) -> DenseMatrix {
    let means = x.column_means();
    DenseMatrix::from_fn(x.rows(), x.cols() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            x[(i, j - 1)] - means[j - 1]
        }
    })
}

/// Mean over factor columns of the R² of an OLS fit (with intercept) of the
/// factor on the embedding coordinates.
pub fn r2_linear(embedding: &DenseMatrix, factors: &DenseMatrix) -> Result<f64> {
    if embedding.rows() != factors.rows() {
        return Err(GraeError::shape(format!(
            "embedding has {} rows, factors have {}",
            embedding.rows(),
            factors.rows()
        )));
    }
    if embedding.is_empty() || factors.cols() == 0 {
        return Err(GraeError::EmptyMatrix);
    }
    let design = design_with_intercept(embedding);
    let mut total = 0.0;
    for c in 0..factors.cols() {
        total += r2_of_fit(&design, &factors.column(c))?;
    }
    Ok(total / factors.cols() as f64)
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// R² between ground-truth angles and the polar angle of a 2-D embedding.
///
/// The embedding is centered, its polar angles aligned to the ground truth
/// by a grid search over a global offset and orientation (then refined to
/// the exact circular-mean optimum), and unwrapped onto the branch nearest
/// a monotone fit before the final regression.
pub fn r2_circular(embedding: &DenseMatrix, angles: &[f64]) -> Result<f64> {
    if embedding.cols() != 2 {
        return Err(GraeError::shape(format!(
            "circular R² needs a 2-D embedding, got {} columns",
            embedding.cols()
        )));
    }
    let n = embedding.rows();
    if n != angles.len() {
        return Err(GraeError::shape(format!(
            "embedding has {n} rows, {} angles given",
            angles.len()
        )));
    }
    if n < 3 {
        return Err(GraeError::invalid("circular R² needs at least 3 points"));
    }
    let means = embedding.column_means();
    let mut theta = Vec::with_capacity(n);
    let mut max_r: f64 = 0.0;
    for i in 0..n {
        let (x, y) = (embedding[(i, 0)] - means[0], embedding[(i, 1)] - means[1]);
        max_r = max_r.max(x.hypot(y));
        theta.push(y.atan2(x));
    }
    if !(max_r > 0.0) {
        return Err(GraeError::Degenerate(
            "embedding collapsed to its center".into(),
        ));
    }
    let truth: Vec<f64> = angles.iter().map(|a| a.rem_euclid(TAU)).collect();

    let mut best = (f64::NEG_INFINITY, 1.0, 0.0);
    for sign in [1.0, -1.0] {
        for k in 0..CIRCULAR_GRID {
            let phi = TAU * k as f64 / CIRCULAR_GRID as f64;
            let score: f64 = theta
                .iter()
                .zip(&truth)
                .map(|(t, a)| (sign * t + phi - a).cos())
                .sum();
            if score > best.0 {
                best = (score, sign, phi);
            }
        }
    }
    let (_, sign, _) = best;
    let (s, c) = theta
        .iter()
        .zip(&truth)
        .fold((0.0, 0.0), |(s, c), (t, a)| {
            let d = a - sign * t;
            (s + d.sin(), c + d.cos())
        });
    let phi = if s == 0.0 && c == 0.0 { best.2 } else { s.atan2(c) };

    let mut x: Vec<f64> = theta
        .iter()
        .zip(&truth)
        .map(|(t, a)| a + wrap_pi(sign * t + phi - a))
        .collect();
    let mut r2 = r2_single(&x, &truth)?;
    for _ in 0..3 {
        let (b0, b1) = ols_line(&x, &truth);
        if b1.abs() < 1e-12 {
            break;
        }
        let mut changed = false;
        for (xi, a) in x.iter_mut().zip(&truth) {
            // shift by whole turns so the fitted line lands nearest the truth
            let target = (a - b0) / b1;
            let m = ((target - *xi) / TAU).round();
            if m != 0.0 {
                *xi += m * TAU;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        r2 = r2.max(r2_single(&x, &truth)?);
    }
    Ok(r2)
}

fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let b1 = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b1 * mx, b1)
}

fn r2_single(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = DenseMatrix::from_vec(x.len(), 1, x.to_vec())?;
    r2_of_fit(&design_with_intercept(&m), y)
}

/// Ground truth for a clustered evaluation.
#[derive(Clone, Copy, Debug)]
pub enum FactorTarget<'a> {
    Linear(&'a DenseMatrix),
    Circular(&'a [f64]),
}

/// Unweighted mean over classes of the per-class R². Classes with fewer
/// than `d + 2` points are skipped.
pub fn r2_clustered(
    embedding: &DenseMatrix,
    target: FactorTarget<'_>,
    labels: &[usize],
) -> Result<f64> {
    let n = embedding.rows();
    if labels.len() != n {
        return Err(GraeError::shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let min_size = embedding.cols() + 2;
    let mut total = 0.0;
    let mut used = 0;
    for (label, idx) in &groups {
        if idx.len() < min_size {
            warn!(
                "class {label} has {} points (< {min_size}); excluded from R²",
                idx.len()
            );
            continue;
        }
        let part = embedding.select_rows(idx);
        total += match target {
            FactorTarget::Linear(f) => r2_linear(&part, &f.select_rows(idx))?,
            FactorTarget::Circular(a) => {
                let sub: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
                r2_circular(&part, &sub)?
            }
        };
        used += 1;
    }
    if used == 0 {
        return Err(GraeError::Degenerate(
            "no class is large enough for a clustered R²".into(),
        ));
    }
    Ok(total / used as f64)
}

/// The R² appropriate to a dataset's factor kind.
pub fn r2_for(embedding: &DenseMatrix, data: &LabeledDataset) -> Result<f64> {
    match data.factor_kind {
        FactorKind::Planar => match &data.class_labels {
            Some(l) => r2_clustered(embedding, FactorTarget::Linear(&data.factors), l),
            None => r2_linear(embedding, &data.factors),
        },
        FactorKind::Circular => r2_circular(embedding, &data.factors.column(0)),
        FactorKind::ClusteredCircular => {
            let angles = data.factors.column(0);
            let labels = data
                .class_labels
                .as_ref()
                .ok_or_else(|| GraeError::invalid("clustered factors need class labels"))?;
            r2_clustered(embedding, FactorTarget::Circular(&angles), labels)
        }
    }
}

pub fn reconstruction_mse(x: &DenseMatrix, x_hat: &DenseMatrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(GraeError::shape(format!(
            "{:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    if x.is_empty() {
        return Err(GraeError::EmptyMatrix);
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.as_slice().len() as f64)
}

/// Percent change of `mse_model` relative to `mse_baseline`.
pub fn relative_mse(mse_model: f64, mse_baseline: f64) -> Result<f64> {
    if !(mse_baseline > 0.0) {
        return Err(GraeError::invalid("baseline MSE must be > 0"));
    }
    Ok(100.0 * (mse_model - mse_baseline) / mse_baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_name: String,
    pub model_name: String,
    pub seed: u64,
    pub r2: f64,
    pub mse: f64,
    pub rel_mse_pct: Option<f64>,
    pub n_test: usize,
}

impl MetricsReport {
    /// Fills `rel_mse_pct` against a baseline MSE.
    pub fn with_baseline(mut self, mse_baseline: f64) -> Result<Self> {
        self.rel_mse_pct = Some(relative_mse(self.mse, mse_baseline)?);
        Ok(self)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, reports: &[MetricsReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(GraeError::from))
        .collect()
}

/// Mean and sample standard deviation of one column over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub dataset_name: String,
    pub model_name: String,
    pub runs: usize,
    pub r2: MeanStd,
    pub mse: MeanStd,
    pub rel_mse_pct: Option<MeanStd>,
}

/// Groups reports by (dataset, model), in first-seen order.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        let key = (r.dataset_name.clone(), r.model_name.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let col = |f: fn(&MetricsReport) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let rel: Vec<f64> = rs.iter().filter_map(|r| r.rel_mse_pct).collect();
            AggregateRow {
                dataset_name: key.0.clone(),
                model_name: key.1.clone(),
                runs: rs.len(),
                r2: MeanStd::of(&col(|r| r.r2)).expect("non-empty group"),
                mse: MeanStd::of(&col(|r| r.mse)).expect("non-empty group"),
                rel_mse_pct: if rel.len() == rs.len() {
                    MeanStd::of(&rel)
                } else {
                    None
                },
            }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dataset", "model", "runs", "r2_mean", "r2_std", "mse_mean", "mse_std", "rel_mse_mean",
        "rel_mse_std",
    ])?;
    for r in rows {
        let (rm, rs) = match r.rel_mse_pct {
            Some(m) => (format!("{:.4}", m.mean), format!("{:.4}", m.std)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.dataset_name.clone(),
            r.model_name.clone(),
            r.runs.to_string(),
            format!("{:.6}", r.r2.mean),
            format!("{:.6}", r.r2.std),
            format!("{:.6e}", r.mse.mean),
            format!("{:.6e}", r.mse.std),
            rm,
            rs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};
    use rand::Rng;

    fn affine(m: &DenseMatrix, a: [[f64; 2]; 2], b: [f64; 2]) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), 2, |i, j| {
            a[j][0] * m[(i, 0)] + a[j][1] * m[(i, 1)] + b[j]
        })
    }

    fn planar_factors(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded(seed);
        DenseMatrix::from_fn(n, 2, |_, j| rng.random::<f64>() * (j + 1) as f64 * 5.0)
    }

    #[test]
    fn linear_exact_and_affine() {
        let f = planar_factors(200, 1);
        assert!((r2_linear(&f, &f).unwrap() - 1.0).abs() < 1e-12);
        let e = affine(&f, [[2.0, -1.0], [0.5, 3.0]], [100.0, -7.0]);
        assert!((r2_linear(&e, &f).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn linear_noise_baseline() {
        let f = planar_factors(1000, 2);
        let mut rng = seeded(77);
        let e = DenseMatrix::from_fn(1000, 2, |_, _| standard_normal(&mut rng));
        assert!(r2_linear(&e, &f).unwrap() < 0.02);
    }

    #[test]
    fn linear_constant_factor_contributes_zero() {
        let f = planar_factors(50, 3);
        let g = DenseMatrix::from_fn(50, 2, |i, j| if j == 0 { f[(i, 0)] } else { 4.0 });
        assert!((r2_linear(&f, &g).unwrap() - 0.5).abs() < 1e-9);
    }

    fn circle(angles: &[f64], rot: f64, flip: bool, scale: f64, shift: [f64; 2]) -> DenseMatrix {
        DenseMatrix::from_fn(angles.len(), 2, |i, j| {
            let a = if flip { -angles[i] } else { angles[i] } + rot;
            let v = if j == 0 { a.cos() } else { a.sin() };
            scale * v + shift[j]
        })
    }

    #[test]
    fn circular_exact_circle_any_pose() {
        let angles: Vec<f64> = (0..360).map(|k| k as f64 * TAU / 360.0).collect();
        for (rot, flip) in [(0.0, false), (1.234, false), (4.0, true), (0.003, true)] {
            let e = circle(&angles, rot, flip, 3.0, [5.0, -2.0]);
            assert!(r2_circular(&e, &angles).unwrap() >= 0.999);
        }
    }

    #[test]
    fn circular_invariance() {
        let mut rng = seeded(5);
        let angles: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * TAU).collect();
        let e = DenseMatrix::from_fn(300, 2, |i, j| {
            let r = 1.0 + 0.3 * standard_normal(&mut rng);
            let a = angles[i] + 0.4 * standard_normal(&mut rng);
            r * if j == 0 { a.cos() } else { a.sin() }
        });
        let base = r2_circular(&e, &angles).unwrap();
        let c = 0.7f64.cos();
        let s = 0.7f64.sin();
        for (a, b) in [
            ([[c, -s], [s, c]], [3.0, 1.0]),
            ([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0]),
            ([[2.5, 0.0], [0.0, 2.5]], [-4.0, 2.0]),
        ] {
            let t = affine(&e, a, b);
            assert!((r2_circular(&t, &angles).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn circular_collapsed_line_is_poor() {
        let angles: Vec<f64> = (0..360).map(|k| k as f64 * TAU / 360.0).collect();
        let e = DenseMatrix::from_fn(360, 2, |i, j| if j == 0 { angles[i].cos() } else { 0.0 });
        let r2 = r2_circular(&e, &angles).unwrap();
        assert!(r2 < 0.9, "r2 {r2}");
        assert!(r2_circular(&DenseMatrix::filled(10, 2, 1.0), &angles[..10]).is_err());
    }

    #[test]
    fn clustered_cases() {
        let f = planar_factors(100, 6);
        let mut e = f.clone();
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert!((r2_clustered(&e, FactorTarget::Linear(&f), &labels).unwrap() - 1.0).abs() < 1e-9);
        let mut rng = seeded(8);
        for i in (1..100).step_by(2) {
            e[(i, 0)] = standard_normal(&mut rng);
            e[(i, 1)] = standard_normal(&mut rng);
        }
        let r = r2_clustered(&e, FactorTarget::Linear(&f), &labels).unwrap();
        let noise = r2_linear(
            &e.select_rows(&(1..100).step_by(2).collect::<Vec<_>>()),
            &f.select_rows(&(1..100).step_by(2).collect::<Vec<_>>()),
        )
        .unwrap();
        assert!((r - (1.0 + noise) / 2.0).abs() < 1e-9);
        assert!((r - 0.5).abs() < 0.1);
        let single = vec![0; 100];
        assert_eq!(
            r2_clustered(&e, FactorTarget::Linear(&f), &single).unwrap(),
            r2_linear(&e, &f).unwrap()
        );
    }

    #[test]
    fn mse_examples() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(reconstruction_mse(&x, &x).unwrap(), 0.0);
        let ones = DenseMatrix::filled(2, 2, 1.0);
        assert_eq!(reconstruction_mse(&DenseMatrix::zeros(2, 2), &ones).unwrap(), 1.0);
        assert!(reconstruction_mse(&x, &DenseMatrix::zeros(2, 3)).is_err());
        assert_eq!(relative_mse(0.5, 0.5).unwrap(), 0.0);
        assert!((relative_mse(0.0034, 0.0210).unwrap() + 83.8).abs() < 0.05);
        assert!((relative_mse(0.0546, 0.0210).unwrap() - 160.0).abs() < 0.05);
        assert!(relative_mse(1.0, 0.0).is_err());
    }

    #[test]
    fn reports_round_trip_and_aggregate() {
        let mk = |model: &str, seed, r2, mse| MetricsReport {
            dataset_name: "swiss_roll".into(),
            model_name: model.into(),
            seed,
            r2,
            mse,
            rel_mse_pct: None,
            n_test: 250,
        };
        let reports = vec![
            mk("ae", 0, 0.5, 0.02),
            mk("grae", 0, 0.9, 0.01).with_baseline(0.02).unwrap(),
            mk("ae", 1, 0.7, 0.04),
            mk("grae", 1, 0.95, 0.01).with_baseline(0.04).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_jsonl(std::fs::File::create(&p).unwrap(), &reports).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), reports);
        let rows = aggregate(&reports);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].model_name, "ae");
        assert!((rows[0].r2.mean - 0.6).abs() < 1e-12);
        assert!((rows[0].r2.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(rows[0].rel_mse_pct.is_none());
        assert!((rows[1].rel_mse_pct.unwrap().mean + 62.5).abs() < 1e-9);
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
