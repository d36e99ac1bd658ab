use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vbwmm::engine::{fit, fit_prepared, prepare, vm_step_alpha, Hyperparameters, LookRateUpdate, Responsibilities};
use vbwmm::hermitian::HermitianMatrix;
use vbwmm::init::InitialAssignment;
use vbwmm::io::{generate_synthetic, score, ClassSpec, Layout, SceneSpec};
use vbwmm::spatial::SpatialWeights;
use vbwmm::{BesselRatioMode, Error, PolsarImage};

fn scene(width: usize, height: usize, looks: u32) -> SceneSpec {
    let a = HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]);
    SceneSpec {
        width,
        height,
        classes: vec![
            ClassSpec { sigma: a, looks },
            ClassSpec { sigma: HermitianMatrix::from_diagonal(&[0.25, 0.5, 1.0]), looks },
            ClassSpec { sigma: a.scale(4.0), looks },
        ],
        layout: Layout::Stripes,
    }
}

fn monotone(values: &[f64], pruned: &[bool]) -> bool {
    (1..values.len()).all(|i| pruned[i] || values[i] >= values[i - 1] - 1e-9 * values[i - 1].abs())
}

#[test]
fn numeric_mode_bound_never_decreases() {
    let (img, _) = generate_synthetic(&scene(30, 24, 6), 1).unwrap();
    for win in [0, 3] {
        for k in [3, 6] {
            let h =
                Hyperparameters { k_init: k, win, bessel_mode: BesselRatioMode::NumericOracle, ..Default::default() };
            let res = fit(&img, &h).unwrap();
            assert!(monotone(&res.trace.values, &res.trace.pruned), "win {win} k {k}: {:?}", res.trace.values);
        }
    }
}

#[test]
fn labels_are_equivariant_under_pixel_shuffle() {
    let (img, truth) = generate_synthetic(&scene(36, 20, 8), 2).unwrap();
    let h = Hyperparameters { k_init: 3, ..Default::default() };
    let base = InitialAssignment::from_labels(&img, &truth).unwrap();
    let res = fit_prepared(&img, &h, &base).unwrap();

    let mut order: Vec<usize> = (0..img.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let shuffled =
        PolsarImage::new(img.width(), img.height(), order.iter().map(|&i| img.pixels()[i]).collect()).unwrap();
    let shuffled_truth: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
    let assignment = InitialAssignment::from_labels(&shuffled, &shuffled_truth).unwrap();
    let other = fit_prepared(&shuffled, &h, &assignment).unwrap();

    for (pos, &i) in order.iter().enumerate() {
        assert_eq!(other.labels[pos], res.labels[i]);
    }
    for (a, b) in res.enl.iter().zip(&other.enl) {
        assert!((a / b - 1.0).abs() < 1e-9);
    }
}

#[test]
fn fit_is_invariant_to_global_scaling() {
    let (img, _) = generate_synthetic(&scene(30, 30, 8), 4).unwrap();
    // ENL converges only to about the bound tolerance, so tighten it here
    let h = Hyperparameters { k_init: 3, tol: 1e-13, max_iter: 2000, ..Default::default() };
    let res = fit(&img, &h).unwrap();
    for t in [0.1, 10.0] {
        let other = fit(&img.scaled(t), &h).unwrap();
        assert_eq!(other.labels, res.labels, "t = {t}");
        for (a, b) in res.enl.iter().zip(&other.enl) {
            assert!((a / b - 1.0).abs() < 1e-6, "t = {t}: {a} vs {b}");
        }
    }
}

#[test]
fn spatial_alpha_matches_double_sum() {
    let (img, _) = generate_synthetic(&scene(5, 5, 8), 5).unwrap();
    let w = SpatialWeights::build(&img, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<f64> = (0..25)
        .flat_map(|_| {
            let x: f64 = rand::Rng::random(&mut rng);
            [x, 1.0 - x]
        })
        .collect();
    let r = Responsibilities::from_rows(2, rows).unwrap();
    let got = vm_step_alpha(&r, 0.3, Some(&w));
    for (k, &got) in got.iter().enumerate() {
        let mut want = 0.0;
        for n in 0..25 {
            for (j, &m) in w.neighbors(n).iter().enumerate() {
                want += w.gamma(n)[j] * (0.3 + r.row(m)[k]);
            }
        }
        assert!((got - want).abs() < 1e-12 * want);
    }
    // without spatial weights the sum is N alpha0 + N_k
    let plain = vm_step_alpha(&r, 0.3, None);
    assert!((plain[0] + plain[1] - (2.0 * 25.0 * 0.3 + 25.0)).abs() < 1e-12);
}

#[test]
fn smoothed_statistics_are_weighted_averages() {
    let (img, _) = generate_synthetic(&scene(6, 6, 8), 7).unwrap();
    let (stats, w) = prepare(&img, 3).unwrap();
    let w = w.unwrap();
    let n = 14;
    let mut want = HermitianMatrix::zeros(3);
    for (&m, &o) in w.neighbors(n).iter().zip(w.omega(n)) {
        want.add_scaled(o, &img.pixels()[m]);
    }
    assert!(stats.covs[n].max_abs_diff(&want) < 1e-14);
    assert_eq!(stats.raw_log_dets[n], img.pixels()[n].log_det().unwrap());
}

#[test]
fn two_classes_are_recovered() {
    let a = HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]);
    let spec = SceneSpec {
        width: 32,
        height: 32,
        classes: vec![ClassSpec { sigma: a, looks: 10 }, ClassSpec { sigma: a.scale(3.0), looks: 10 }],
        layout: Layout::Checkerboard { tiles_x: 2, tiles_y: 2 },
    };
    let (img, truth) = generate_synthetic(&spec, 8).unwrap();
    let res = fit(&img, &Hyperparameters { k_init: 2, ..Default::default() }).unwrap();
    assert!(score(&res.labels, &truth).unwrap().overall_accuracy >= 0.98);
}

#[test]
fn offset_rate_rule_fails_on_realistic_data() {
    let (img, _) = generate_synthetic(&scene(24, 24, 8), 9).unwrap();
    let h = Hyperparameters { k_init: 3, look_rate: LookRateUpdate::WithStirlingOffset, ..Default::default() };
    match fit(&img, &h) {
        Err(Error::AtIteration { source, .. }) => assert!(matches!(*source, Error::InvalidIggParams { .. })),
        other => panic!("expected InvalidIggParams, got {other:?}"),
    }
}

#[test]
fn all_pruned_is_reported() {
    let (img, _) = generate_synthetic(&scene(12, 12, 8), 10).unwrap();
    let h = Hyperparameters { k_init: 3, prune_threshold: Some(1e9), ..Default::default() };
    match fit(&img, &h) {
        Err(Error::AtIteration { source, .. }) => assert!(matches!(*source, Error::AllPruned { .. })),
        other => panic!("expected AllPruned, got {other:?}"),
    }
}

#[test]
fn constant_image_falls_back_to_one_cluster() {
    let img = PolsarImage::new(8, 8, vec![HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]); 64]).unwrap();
    let h = Hyperparameters { k_init: 4, nominal_looks: Some(8.0), ..Default::default() };
    let res = fit(&img, &h).unwrap();
    assert_eq!(res.effective_k(), 1);
    assert!(res.labels.iter().all(|&l| l == 0));
}
