//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use grae::autoencoder::{
    fit, grae_loss_and_grads, interpolate_path, total_loss, train_with_callback, Network,
    TrainConfig, TrainMode,
};
use grae::datasets::{make_object_tracking, make_rotating_object, make_swiss_roll, split, SplitSpec};
use grae::diffusion::{build_diffusion_model, DiffusionParams, KneeStrategy};
use grae::mds::{classical_mds, normalized_stress, reference_embed, smacof, Embedding, EmbeddingSource, MdsParams};
use grae::metrics::{r2_circular, r2_for, reconstruction_mse};
use grae::numerics::pairwise_sq_distances;
use grae::rng::{random_orthogonal, seeded, standard_normal};
use grae::stitch::{default_anchor_count, diameter, make_plan, procrustes, stitched_reference_embed};
use grae::DenseMatrix;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn distances(x: &DenseMatrix) -> DenseMatrix {
    let mut d = pairwise_sq_distances(x).unwrap();
    d.as_mut_slice().iter_mut().for_each(|v| *v = v.sqrt());
    d
}

fn cloud(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(n, d, |_, _| standard_normal(&mut rng))
}

// Swiss roll settings for criteria 1 and 2.
fn swiss_diffusion() -> DiffusionParams {
    DiffusionParams {
        t_override: Some(80),
        ..DiffusionParams::default()
    }
}

fn swiss_train(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        ..TrainConfig::default()
    }
}

// Automatic two-line knee: rotating object (criteria 3, 9) and stitching (7).
fn auto_diffusion() -> DiffusionParams {
    DiffusionParams {
        knee: KneeStrategy::TwoLine,
        ..DiffusionParams::default()
    }
}

fn rotation_train(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        learning_rate: 1e-3,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

struct SwissRun {
    r2: [f64; 2],
    mse: [f64; 2],
}

/// Criteria 1 and 2 share these runs: 3,000 train + 250 middle-slice test.
fn swiss_runs() -> Vec<SwissRun> {
    (0..5u64)
        .map(|seed| {
            let t0 = Instant::now();
            let ds = make_swiss_roll(3250, seed).unwrap();
            let sp = split(&ds, &SplitSpec::MiddleSlice { slice_count: 250 }).unwrap();
            let reference =
                reference_embed(&sp.train.features, &swiss_diffusion(), &MdsParams::default(), seed).unwrap();
            let mut run = SwissRun {
                r2: [0.0; 2],
                mse: [0.0; 2],
            };
            for (k, mode) in [TrainMode::Grae, TrainMode::Vanilla].into_iter().enumerate() {
                let (net, _) =
                    fit(&sp.train.features, Some(&reference.embedding), &swiss_train(mode, seed)).unwrap();
                let z = net.encode(&sp.test.features).unwrap();
                run.r2[k] = r2_for(&z, &sp.test).unwrap();
                run.mse[k] =
                    reconstruction_mse(&sp.test.features, &net.reconstruct(&sp.test.features).unwrap()).unwrap();
            }
            println!(
                "  swiss seed {seed}: grae r2 {:.4} mse {:.4e} | ae r2 {:.4} mse {:.4e} ({:.0}s)",
                run.r2[0],
                run.mse[0],
                run.r2[1],
                run.mse[1],
                t0.elapsed().as_secs_f64()
            );
            run
        })
        .collect()
}

fn criterion_1(runs: &[SwissRun]) -> Outcome {
    let g = mean(&runs.iter().map(|r| r.r2[0]).collect::<Vec<_>>());
    let a = mean(&runs.iter().map(|r| r.r2[1]).collect::<Vec<_>>());
    outcome(
        g >= 0.90 && a <= 0.75 && g - a >= 0.15,
        format!("mean test R2 grae {g:.4} (>= 0.90), ae {a:.4} (<= 0.75), gap {:.4} (>= 0.15)", g - a),
    )
}

fn criterion_2(runs: &[SwissRun]) -> Outcome {
    let g = mean(&runs.iter().map(|r| r.mse[0]).collect::<Vec<_>>());
    let a = mean(&runs.iter().map(|r| r.mse[1]).collect::<Vec<_>>());
    outcome(
        g <= 0.7 * a,
        format!("mean test MSE grae {g:.4e} vs ae {a:.4e}, ratio {:.3} (<= 0.7)", g / a),
    )
}

fn criterion_3() -> Outcome {
    let scores: Vec<f64> = (0..5u64)
        .map(|seed| {
            let ds = make_rotating_object(360, 16, 1, seed).unwrap();
            let sp = split(&ds, &SplitSpec::RandomFraction { test_fraction: 0.2, seed }).unwrap();
            let r = reference_embed(&sp.train.features, &auto_diffusion(), &MdsParams::default(), seed).unwrap();
            let (net, _) = fit(&sp.train.features, Some(&r.embedding), &rotation_train(TrainMode::Grae, seed)).unwrap();
            let z = net.encode(&sp.test.features).unwrap();
            r2_circular(&z, &sp.test.factors.column(0)).unwrap()
        })
        .collect();
    let m = mean(&scores);
    outcome(
        m >= 0.95,
        format!("mean GRAE circular R2 {m:.4} over 5 seeds (>= 0.95); per seed {scores:.4?}"),
    )
}

fn criterion_4() -> Outcome {
    let ds = make_swiss_roll(300, 4).unwrap();
    let x = &ds.features;
    let reference = Embedding::new(cloud(300, 2, 5), EmbeddingSource::Mds, 5);
    let trajectory = |mode: TrainMode| {
        let cfg = TrainConfig {
            mode,
            seed: 9,
            lambda_max: if mode == TrainMode::Grae { 0.0 } else { 100.0 },
            epochs: 25,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden_widths: vec![32, 16],
            ..TrainConfig::default()
        };
        let net = Network::init(&cfg.widths_for(3), cfg.seed).unwrap();
        let mut params = Vec::new();
        train_with_callback(net, x, Some(&reference), &cfg, &mut |n, _| params.push(n.params().to_vec()))
            .unwrap();
        params
    };
    let g = trajectory(TrainMode::Grae);
    let a = trajectory(TrainMode::Vanilla);
    let same = g.len() == a.len()
        && g.iter().zip(&a).all(|(p, q)| {
            p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits())
        });
    outcome(same, format!("{} epochs of parameters compared bit for bit", g.len()))
}

/// Worst relative error between analytic and central-difference gradients.
fn gradient_error(widths: &[usize], seed: u64, lambda: f64, wd: f64) -> f64 {
    let mut net = Network::init(widths, seed).unwrap();
    let mut rng = seeded(seed ^ 0xfd);
    // random biases keep ReLU inputs away from the kink
    let mut off = 0;
    for w in widths.windows(2) {
        off += w[0] * w[1];
        for p in &mut net.params_mut()[off..off + w[1]] {
            *p = 0.1 * standard_normal(&mut rng);
        }
        off += w[1];
    }
    let batch = rng.random_range(2..7);
    let x = DenseMatrix::from_fn(batch, widths[0], |_, _| standard_normal(&mut rng));
    let e = DenseMatrix::from_fn(batch, net.latent_dim(), |_, _| standard_normal(&mut rng));
    let e = (lambda > 0.0).then_some(&e);
    let (_, g) = grae_loss_and_grads(&net, &x, e, lambda, wd).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..net.num_params() {
        let mut plus = net.clone();
        plus.params_mut()[k] += h;
        let mut minus = net.clone();
        minus.params_mut()[k] -= h;
        let fd = (total_loss(&plus, &x, e, lambda, wd).unwrap() - total_loss(&minus, &x, e, lambda, wd).unwrap())
            / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6));
    }
    worst
}

fn criterion_5() -> Outcome {
    let mut rng = seeded(55);
    let mut worst: f64 = 0.0;
    let nets = 24;
    for i in 0..nets {
        let depth = rng.random_range(1..4);
        let mut half: Vec<usize> = (0..depth).map(|_| rng.random_range(2..9)).collect();
        half.push(rng.random_range(1..4));
        // mirrored around the bottleneck, the last entry of `half`
        let mut widths = half.clone();
        widths.extend(half.iter().rev().skip(1));
        // reconstruction only, then reconstruction + geometric + weight decay
        worst = worst.max(gradient_error(&widths, i, 0.0, 0.0));
        worst = worst.max(gradient_error(&widths, i + 1000, rng.random_range(0.1..10.0), 1e-3));
    }
    outcome(
        worst < 1e-4,
        format!("{nets} random networks, both loss components: worst relative error {worst:.2e} (< 1e-4)"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = seeded(66);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut fixtures = 0;
    for f in 0..100u64 {
        let n = rng.random_range(5..40);
        let d = match f % 3 {
            // Euclidean in higher dimension
            0 => distances(&cloud(n, rng.random_range(3..8), f)),
            // non-Euclidean dissimilarities
            1 => {
                let mut m = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let v = rng.random::<f64>() + 0.01;
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            }
            _ => distances(&cloud(n, 2, f)),
        };
        let init = Embedding::new(cloud(n, 2, f + 500), EmbeddingSource::Mds, f);
        let fit = smacof(&d, &init, 300, 1e-14).unwrap();
        for w in fit.stress_history.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        fixtures += 1;
    }
    let mut worst_exact: f64 = 0.0;
    for f in 0..20u64 {
        let pts = cloud(rng.random_range(5..30), 2, 900 + f);
        let d = distances(&pts);
        let init = classical_mds(&d, 2).unwrap();
        let mut perturbed = init.clone();
        perturbed
            .coords
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += 0.05 * standard_normal(&mut rng));
        let fit = smacof(&d, &perturbed, 2000, 1e-15).unwrap();
        worst_exact = worst_exact.max(normalized_stress(&fit.embedding.coords, &d));
    }
    outcome(
        worst_rise <= 1e-12 && worst_exact < 1e-6,
        format!(
            "{fixtures} fixtures: largest stress increase {worst_rise:.2e} (<= 1e-12); \
             20 realizable 2-D instances: worst final stress {worst_exact:.2e} (< 1e-6)"
        ),
    )
}

fn criterion_7() -> Outcome {
    // 4,000 training rows plus a 1,000-row random test split
    let seed = 7;
    let ds = make_swiss_roll(5000, seed).unwrap();
    let sp = split(&ds, &SplitSpec::RandomFraction { test_fraction: 0.2, seed }).unwrap();
    let x = &sp.train.features;
    let n = x.rows();
    // each batch picks its own diffusion time
    let diff = auto_diffusion();
    let mds = MdsParams::default();
    let anchors = default_anchor_count(n);
    let batch_size = anchors + (n - anchors).div_ceil(4);

    let full = reference_embed(x, &diff, &mds, seed).unwrap().embedding;
    let t4 = Instant::now();
    let plan4 = make_plan(n, batch_size, anchors, seed).unwrap();
    let stitched = stitched_reference_embed(x, &plan4, &diff, &mds, seed).unwrap();
    let time4 = t4.elapsed().as_secs_f64();

    let tf = procrustes(&stitched.coords, &full.coords).unwrap();
    let aligned = tf.apply(&stitched.coords).unwrap();
    let disc = mean(
        &(0..n)
            .map(|i| {
                aligned
                    .row(i)
                    .iter()
                    .zip(full.coords.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect::<Vec<_>>(),
    );
    let diam = diameter(&full.coords);

    let n8 = anchors + 8 * (batch_size - anchors);
    let x8 = make_swiss_roll(n8, seed + 1).unwrap().features;
    let t8 = Instant::now();
    let plan8 = make_plan(n8, batch_size, anchors, seed).unwrap();
    stitched_reference_embed(&x8, &plan8, &diff, &mds, seed).unwrap();
    let time8 = t8.elapsed().as_secs_f64();

    let r2_with = |e: &Embedding| {
        let (net, _) = fit(x, Some(e), &swiss_train(TrainMode::Grae, seed)).unwrap();
        r2_for(&net.encode(&sp.test.features).unwrap(), &sp.test).unwrap()
    };
    let r2_full = r2_with(&full);
    let r2_stitched = r2_with(&stitched);

    let ok_disc = disc <= 0.10 * diam;
    let ok_r2 = (r2_full - r2_stitched).abs() <= 0.05;
    let ok_time = time8 <= 2.5 * time4;
    outcome(
        ok_disc && ok_r2 && ok_time && plan4.batch_count() == 4 && plan8.batch_count() == 8,
        format!(
            "discrepancy {:.2}% of diameter (<= 10%); GRAE R2 full {r2_full:.4} vs stitched {r2_stitched:.4} \
             (|diff| <= 0.05); time 8 batches {time8:.1}s vs 4 batches {time4:.1}s, ratio {:.2} (<= 2.5)",
            100.0 * disc / diam,
            time8 / time4
        ),
    )
}

fn criterion_8() -> Outcome {
    let fixtures: Vec<(&str, DenseMatrix)> = vec![
        ("swiss roll", make_swiss_roll(300, 1).unwrap().features),
        ("gaussian cloud", cloud(150, 5, 2)),
        ("rotating object", make_rotating_object(90, 12, 2, 3).unwrap().features),
        ("object tracking", make_object_tracking(150, 12, 4, 0.1, 4).unwrap().features),
        ("two clusters", {
            let mut c = cloud(120, 3, 5);
            for i in 0..60 {
                c.row_mut(i).iter_mut().for_each(|v| *v += 8.0);
            }
            c
        }),
    ];
    let mut worst_row: f64 = 0.0;
    let mut worst_rise = f64::NEG_INFINITY;
    for (_, x) in &fixtures {
        for knee in [KneeStrategy::SecondDifference, KneeStrategy::TwoLine] {
            let p = DiffusionParams {
                knee,
                t_max: 60,
                ..DiffusionParams::default()
            };
            let m = build_diffusion_model(x, &p).unwrap();
            for r in m.operator.row_iter() {
                worst_row = worst_row.max((r.iter().sum::<f64>() - 1.0).abs());
            }
            for w in m.vne_curve.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    let mut worst_res: f64 = 0.0;
    let mut rng = seeded(88);
    for k in 0..20u64 {
        let d = 2 + (k as usize % 3);
        let a = cloud(25, d, 800 + k);
        let r = random_orthogonal(d, &mut rng);
        let s = rng.random_range(0.2..5.0);
        let t: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut b = a.matmul(&r).unwrap();
        b.scale_in_place(s);
        for i in 0..25 {
            b.row_mut(i).iter_mut().zip(&t).for_each(|(v, o)| *v += o);
        }
        let tf = procrustes(&a, &b).unwrap();
        worst_res = worst_res.max(tf.residual(&a, &b).unwrap());
    }
    outcome(
        worst_row <= 1e-10 && worst_rise <= 1e-9 && worst_res < 1e-9,
        format!(
            "{} fixtures: row-sum error {worst_row:.2e} (<= 1e-10), largest entropy increase {worst_rise:.2e} \
             (<= 1e-9); 20 Procrustes recoveries: worst residual {worst_res:.2e} (< 1e-9)",
            fixtures.len()
        ),
    )
}

/// Errors of decoded midpoints between consecutive training frames against
/// the held-out frame in between, for one model.
fn interpolation_errors(seed: u64, mode: TrainMode) -> Vec<f64> {
    let n_angles = 360;
    let ds = make_rotating_object(n_angles, 16, 2, seed).unwrap();
    let train_idx: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 0).collect();
    let train = ds.subset(&train_idx);
    let reference = if mode == TrainMode::Grae {
        Some(reference_embed(&train.features, &auto_diffusion(), &MdsParams::default(), seed).unwrap().embedding)
    } else {
        None
    };
    let (net, _) = fit(&train.features, reference.as_ref(), &rotation_train(mode, seed)).unwrap();
    let z = net.encode(&train.features).unwrap();
    let per_object = n_angles / 2;
    let mut errors = Vec::new();
    for obj in 0..2 {
        for k in 0..per_object {
            let a = obj * per_object + k;
            let b = obj * per_object + (k + 1) % per_object;
            let mid = interpolate_path(&net, z.row(a), z.row(b), 3).unwrap();
            let held_out = ds.features.row(obj * n_angles + 2 * k + 1);
            let err = mid
                .row(1)
                .iter()
                .zip(held_out)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / held_out.len() as f64;
            errors.push(err);
        }
    }
    errors
}

fn criterion_9() -> Outcome {
    let mut g = Vec::new();
    let mut a = Vec::new();
    for seed in 0..10u64 {
        g.extend(interpolation_errors(seed, TrainMode::Grae));
        a.extend(interpolation_errors(seed, TrainMode::Vanilla));
    }
    let (gm, am) = (quantile(&g, 0.5), quantile(&a, 0.5));
    let (g95, a95) = (quantile(&g, 0.95), quantile(&a, 0.95));
    outcome(
        gm <= am && g95 < a95,
        format!(
            "{} interpolations per model over 10 seeds: median grae {gm:.3e} vs ae {am:.3e}; \
             p95 grae {g95:.3e} vs ae {a95:.3e}",
            g.len()
        ),
    )
}

fn main() {
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted = |k: usize| only.is_empty() || only.iter().any(|a| a == &format!("c{k}"));
    let mut failed = 0;
    let mut report = |k: usize, t0: Instant, o: Outcome| {
        println!(
            "{} criterion {k}: {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    };
    if wanted(1) || wanted(2) {
        let t0 = Instant::now();
        let runs = swiss_runs();
        if wanted(1) {
            report(1, t0, criterion_1(&runs));
        }
        if wanted(2) {
            report(2, t0, criterion_2(&runs));
        }
    }
    let rest: [(usize, fn() -> Outcome); 7] = [
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (k, f) in rest {
        if wanted(k) {
            let t0 = Instant::now();
            report(k, t0, f());
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
