use proptest::prelude::*;

use grae::autoencoder::{lambda_at, TrainConfig};
use grae::datasets::{make_swiss_roll, split, SplitSpec};
use grae::diffusion::{alpha_decay_kernel, knn_bandwidths, row_normalize, DiffusionParams, build_diffusion_model};
use grae::io::{read_matrix_csv, write_matrix_csv};
use grae::mds::{classical_mds, smacof};
use grae::numerics::pairwise_sq_distances;
use grae::rng::{random_orthogonal, seeded};
use grae::stitch::{make_plan, procrustes};
use grae::DenseMatrix;
use rand::Rng;

fn cloud(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn distances(x: &DenseMatrix) -> DenseMatrix {
    let mut d = pairwise_sq_distances(x).unwrap();
    d.as_mut_slice().iter_mut().for_each(|v| *v = v.sqrt());
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn procrustes_inverts_similarities(seed in any::<u64>(), d in 2usize..5, scale in 0.1f64..10.0) {
        let a = cloud(20, d, seed);
        let mut rng = seeded(seed ^ 1);
        let r = random_orthogonal(d, &mut rng);
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let mut b = a.matmul(&r).unwrap();
        b.scale_in_place(scale);
        for i in 0..20 {
            b.row_mut(i).iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
        let tf = procrustes(&a, &b).unwrap();
        prop_assert!((tf.scale - scale).abs() < 1e-9 * scale);
        prop_assert!(tf.residual(&a, &b).unwrap() < 1e-9 * scale);
    }

    #[test]
    fn operator_rows_are_stochastic(seed in any::<u64>(), k in 1usize..8, alpha in 1.0f64..60.0) {
        let x = cloud(30, 3, seed);
        let d2 = pairwise_sq_distances(&x).unwrap();
        let sig = knn_bandwidths(&d2, k).unwrap();
        let kern = alpha_decay_kernel(&d2, &sig, alpha).unwrap();
        prop_assert_eq!(kern.max_asymmetry(), 0.0);
        let p = row_normalize(&kern).unwrap();
        for r in p.row_iter() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn smacof_never_increases_stress(seed in any::<u64>(), n in 4usize..25) {
        let x = cloud(n, 4, seed);
        let d = distances(&x);
        let init = classical_mds(&d, 2).unwrap();
        let fit = smacof(&d, &init, 60, 1e-12).unwrap();
        for w in fit.stress_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn classical_mds_is_permutation_equivariant(seed in any::<u64>()) {
        let x = cloud(12, 3, seed);
        let d = distances(&x);
        let mut perm: Vec<usize> = (0..12).collect();
        perm.reverse();
        perm.swap(2, 7);
        let dp = DenseMatrix::from_fn(12, 12, |i, j| d[(perm[i], perm[j])]);
        let e = classical_mds(&d, 2).unwrap();
        let ep = classical_mds(&dp, 2).unwrap();
        let de = distances(&e.coords);
        let dpe = distances(&ep.coords);
        for i in 0..12 {
            for j in 0..12 {
                prop_assert!((de[(perm[i], perm[j])] - dpe[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn plans_cover_every_row(n in 60usize..400, bs in 30usize..120, a in 5usize..25, seed in any::<u64>()) {
        prop_assume!(a < bs && bs < n);
        let plan = make_plan(n, bs, a, seed).unwrap();
        let mut seen = vec![0usize; n];
        for k in 0..plan.batch_count() {
            prop_assert_eq!(&plan.batches[k][..a], &plan.anchor_indices[..]);
            for &i in plan.unique_rows(k) {
                seen[i] += 1;
            }
        }
        for &i in &plan.anchor_indices {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn splits_partition_rows(seed in any::<u64>(), frac in 0.05f64..0.9, slice in 1usize..60) {
        let ds = make_swiss_roll(80, seed).unwrap();
        for spec in [
            SplitSpec::RandomFraction { test_fraction: frac, seed },
            SplitSpec::MiddleSlice { slice_count: slice },
        ] {
            let s = split(&ds, &spec).unwrap();
            let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..80).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len() + s.test.len(), 80);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), r in 1usize..8, c in 1usize..6, mag in -300i32..300) {
        let m = cloud(r, c, seed);
        let mut m2 = m.clone();
        m2.scale_in_place(10f64.powi(mag));
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m2, None).unwrap();
        let (back, h) = read_matrix_csv(buf.as_slice()).unwrap();
        prop_assert!(h.is_none());
        prop_assert_eq!(back, m2);
    }

    #[test]
    fn schedule_decreases_within_bounds(lmax in 0.0f64..1000.0, alpha in 0.0f64..2.0, epochs in 1usize..400) {
        let cfg = TrainConfig { lambda_max: lmax, schedule_alpha: alpha, epochs, ..TrainConfig::default() };
        let mut prev = f64::INFINITY;
        for e in 0..epochs {
            let l = lambda_at(e, &cfg);
            prop_assert!((0.0..=lmax).contains(&l));
            prop_assert!(l <= prev);
            prev = l;
        }
    }
}

#[test]
fn potential_distances_are_a_metric_shape() {
    let x = cloud(40, 3, 11);
    let m = build_diffusion_model(&x, &DiffusionParams::default()).unwrap();
    let p = &m.potential;
    assert_eq!(p.max_asymmetry(), 0.0);
    assert!((0..40).all(|i| p[(i, i)] == 0.0));
    assert!(p.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite()));
}
