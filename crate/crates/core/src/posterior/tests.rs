use super::*;
use crate::cnf::{FlowConfig, FlowModel};
use crate::geomodel::{make_layered_model, GeoConfig, Grid2D};
use crate::resim::{simulate, FluidProps, InjectionSchedule, LeakConfig};
use ndarray::Array3;
use proptest::prelude::*;
use rand::Rng;

fn model() -> FlowModel<f64> {
    let cfg = FlowConfig {
        levels: 2,
        steps_per_level: 2,
        hidden_channels: 8,
        clamp: 2.0,
        seed: 2,
    };
    let mut m = FlowModel::<f64>::new(cfg, (1, 16, 16), 3).unwrap();
    m.perturb(0.05, 3);
    // latents land near a mid-grey image with spread well inside [0, 1]
    let (logs, bias) = (m.param_table()[0].offset, m.param_table()[1].offset);
    for c in 0..4 {
        m.params_mut()[logs + c] = 2.0f64.ln();
        m.params_mut()[bias + c] = -1.0;
    }
    m.initialized = true;
    m
}

fn y() -> Array3<f64> {
    let mut r = rng::stream(1, 9);
    Array3::from_shape_fn((3, 16, 16), |_| r.random::<f64>())
}

fn field(seed: u64, shape: (usize, usize)) -> Array2<f64> {
    let mut r = rng::stream(seed, 9);
    Array2::from_shape_fn(shape, |_| r.random::<f64>())
}

#[test]
fn identical_latents_give_zero_spread() {
    let m = model();
    let z = Array1::from_shape_fn(256, |i| (i as f64 * 0.37).sin());
    let ens = sample_with_latents(&y().view(), &m, &vec![z; 5]).unwrap();
    assert!(ens.std.iter().all(|&v| v == 0.0));
    assert_eq!(ens.mean, ens.samples[0]);
    assert!(ens.normalized_std.iter().all(|&v| v == 0.0));
}

#[test]
fn sampling_is_deterministic_and_bounded() {
    let m = model();
    let a = sample_posterior(&y().view(), &m, 8, 4).unwrap();
    let b = sample_posterior(&y().view(), &m, 8, 4).unwrap();
    assert_eq!(a, b);
    let c = sample_posterior(&y().view(), &m, 8, 5).unwrap();
    assert_ne!(a.mean, c.mean);
    for s in &a.samples {
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    for ((&mu, &sd), idx) in a.mean.iter().zip(&a.std).zip(ndarray::indices(a.mean.dim())) {
        assert!(sd >= 0.0);
        let lo = a.samples.iter().map(|s| s[idx]).fold(f64::INFINITY, f64::min);
        let hi = a.samples.iter().map(|s| s[idx]).fold(f64::NEG_INFINITY, f64::max);
        assert!(mu >= lo - 1e-12 && mu <= hi + 1e-12);
    }
    assert!(sample_posterior(&y().view(), &m, 1, 4).is_err());
    let mut fresh = m.clone();
    fresh.initialized = false;
    assert!(matches!(sample_posterior(&y().view(), &fresh, 4, 1), Err(Error::Uninitialized(_))));
}

#[test]
fn ensemble_statistics_match_brute_force() {
    let ens = sample_posterior(&y().view(), &model(), 16, 7).unwrap();
    let m = ens.len() as f64;
    for idx in ndarray::indices(ens.mean.dim()) {
        let vals: Vec<f64> = ens.samples.iter().map(|s| s[idx]).collect();
        let mean = vals.iter().sum::<f64>() / m;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        assert!((mean - ens.mean[idx]).abs() < 1e-6);
        assert!((std - ens.std[idx]).abs() < 1e-6);
    }
}

#[test]
fn monte_carlo_mean_converges() {
    let m = model();
    let small = sample_posterior(&y().view(), &m, 64, 11).unwrap();
    let large = sample_posterior(&y().view(), &m, 512, 12).unwrap();
    let diff = (&small.mean - &large.mean).mapv(f64::abs).mean().unwrap();
    let bound = 2.0 / 64f64.sqrt() * large.std.mean().unwrap();
    assert!(large.std.mean().unwrap() > 0.01);
    assert!(diff < bound, "mean |diff| {diff} bound {bound}");
}

#[test]
fn normalized_std_cases() {
    let shape = (32, 32);
    let zeros = Array2::zeros(shape);
    assert!(normalized_std(&field(1, shape), &zeros).iter().all(|&v| v == 0.0));

    let flat = normalized_std(&Array2::from_elem(shape, 0.5), &Array2::from_elem(shape, 0.1));
    for &v in flat.slice(s![8..24, 8..24]).iter() {
        assert!((v - 0.1 / 0.525).abs() < 1e-9, "{v}");
    }
    assert!((flat[[16, 16]] - 0.1905).abs() < 1e-4);

    let (mean, std) = (field(2, shape), field(3, shape).mapv(|v| 0.2 * v));
    let a = normalized_std(&mean, &std);
    let b = normalized_std(&(&mean * 2.0), &(&std * 2.0));
    // identical: eps scales with the envelope peak
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    let degenerate = normalized_std(&zeros, &Array2::from_elem(shape, 1e-7));
    assert!(degenerate.iter().all(|v| v.is_finite() && (*v - 0.1).abs() < 1e-12));
}

#[test]
fn ssim_oracles() {
    let x = field(4, (24, 24));
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let half = Array2::from_shape_fn((32, 32), |(_, j)| if j < 16 { 1.0 } else { 0.0 });
    let v = ssim(&half, &half.mapv(|v| 1.0 - v)).unwrap();
    assert!(v < 0.1, "{v}");
    assert!(ssim(&Array2::zeros((10, 30)), &Array2::zeros((10, 30))).is_err());
    assert!(ssim(&Array2::zeros((12, 12)), &Array2::zeros((12, 13))).is_err());
}

proptest! {
    #[test]
    fn ssim_bounded_and_symmetric(a in 0u64..1000, b in 0u64..1000) {
        let (x, y) = (field(a, (16, 16)), field(b + 5000, (16, 16)));
        let v = ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert!((v - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rmse_symmetric_non_negative(a in 0u64..1000, b in 0u64..1000) {
        let (x, y) = (field(a, (8, 8)), field(b + 5000, (8, 8)));
        let r = rmse(&x, &y).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r, rmse(&y, &x).unwrap());
    }

    #[test]
    fn leak_score_scale_invariant(a in 0u64..1000, k in 0.01f64..100.0) {
        let m = field(a, (16, 16));
        let seal = 5..7;
        let s1 = leak_score(&m, &seal);
        prop_assert!((0.0..=1.0).contains(&s1));
        prop_assert!((s1 - leak_score(&(&m * k), &seal)).abs() < 1e-12);
    }
}

#[test]
fn rmse_cases() {
    let x = field(5, (8, 8));
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    assert!((rmse(&Array2::zeros((4, 4)), &Array2::from_elem((4, 4), 0.5)).unwrap() - 0.5).abs() < 1e-15);
    assert!(rmse(&x, &Array2::zeros((8, 9))).is_err());
}

#[test]
fn classify_leak_cases() {
    let seal = 4..6;
    let mut m = Array2::zeros((10, 10));
    m.slice_mut(s![..4, ..]).fill(0.3 / 40.0);
    m.slice_mut(s![6.., ..]).fill(0.7 / 40.0);
    let (flag, score) = classify_leak(&m, &seal, 0.01);
    assert!(flag);
    assert!((score - 0.3).abs() < 1e-12);
    assert_eq!(classify_leak(&Array2::zeros((10, 10)), &seal, 0.01), (false, 0.0));
}

#[test]
fn no_leak_simulation_scores_zero() {
    let model = make_layered_model(3, Grid2D::with_default_extent(64, 64).unwrap(), &GeoConfig::default()).unwrap();
    let sim = simulate(&model, &FluidProps::default(), &InjectionSchedule::default(), &LeakConfig::default()).unwrap();
    let (flag, score) = classify_leak(sim.final_saturation(), &model.seal_rows, 0.01);
    assert!(score < 1e-4 && !flag, "score {score}");
    assert!(sim.final_saturation().sum() > 0.0);
}

#[test]
fn tau_calibration() {
    assert_eq!(calibrate_tau(&[0.2, 0.4], &[0.0, 0.02]), Some(0.11));
    // overlapping classes: one error is the best any threshold can do
    let (leak, none) = ([0.05, 0.3, 0.4], [0.0, 0.1]);
    let t = calibrate_tau(&leak, &none).unwrap();
    let errors = leak.iter().filter(|&&v| v <= t).count() + none.iter().filter(|&&v| v > t).count();
    assert_eq!(errors, 1, "{t}");
    assert_eq!(calibrate_tau(&[], &[0.1]), None);
}

#[test]
fn reports_round_trip_through_csv() {
    let truth = field(6, (16, 16));
    let ens = PosteriorEnsemble::from_samples(vec![field(7, (16, 16)), field(8, (16, 16))]).unwrap();
    let row = evaluate(3, &ens, &truth, true, &(4..6), 0.01).unwrap();
    assert!(row.ssim <= 1.0 && row.rmse >= 0.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("eval.csv");
    write_reports(&p, &[row.clone(), row.clone()]).unwrap();
    assert_eq!(read_reports(&p).unwrap(), vec![row.clone(), row]);
}
