use super::*;
use crate::cnf::{FlowConfig, FlowModel};
use ndarray::Array3;
use rand::Rng;

fn toy() -> FlowConfig {
    FlowConfig {
        levels: 2,
        steps_per_level: 2,
        hidden_channels: 4,
        clamp: 2.0,
        seed: 1,
    }
}

fn image(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut r = rng::stream(seed, 77);
    Array3::from_shape_fn(shape, |_| r.random::<f64>())
}

fn views(a: &[Array3<f64>]) -> Vec<ArrayView3<'_, f64>> {
    a.iter().map(|v| v.view()).collect()
}

#[test]
fn identity_flow_loss_values() {
    let mut m = FlowModel::<f64>::new(toy(), (1, 4, 4), 3).unwrap();
    m.initialized = true;
    let y = vec![Array3::zeros((3, 4, 4))];
    let zero = vec![Array3::zeros((1, 4, 4))];
    assert_eq!(eval_loss(&m, &views(&zero), &views(&y)).unwrap(), 0.0);
    let ones = vec![Array3::ones((1, 4, 4))];
    assert_eq!(eval_loss(&m, &views(&ones), &views(&y)).unwrap(), 8.0);
    let (l, _) = nll_loss(&m, &views(&ones), &views(&y)).unwrap();
    assert_eq!(l, 8.0);
    // actnorm log-scales enter with their spatial size
    let logs = m.table[0].offset;
    m.params[logs] = 0.5;
    let l = eval_loss(&m, &views(&zero), &views(&y)).unwrap();
    assert!((l + 0.5 * 4.0).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let mut m = FlowModel::<f64>::new(toy(), (1, 4, 4), 3).unwrap();
    m.perturb(0.3, 9);
    m.initialized = true;
    let xs: Vec<_> = (0..3).map(|i| image((1, 4, 4), i)).collect();
    let ys: Vec<_> = (0..3).map(|i| image((3, 4, 4), 10 + i)).collect();
    let (_, grad) = nll_loss(&m, &views(&xs), &views(&ys)).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..m.params.len() {
        let orig = m.params[i];
        m.params[i] = orig + h;
        let lp = eval_loss(&m, &views(&xs), &views(&ys)).unwrap();
        m.params[i] = orig - h;
        let lm = eval_loss(&m, &views(&xs), &views(&ys)).unwrap();
        m.params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        assert!(rel < 1e-3, "param {i}: analytic {} fd {fd}", grad[i]);
    }
    assert!(worst < 1e-3);
}

#[test]
fn loss_is_batch_order_invariant() {
    let mut m = FlowModel::<f64>::new(toy(), (1, 4, 4), 3).unwrap();
    m.perturb(0.2, 2);
    m.initialized = true;
    let xs: Vec<_> = (0..5).map(|i| image((1, 4, 4), i)).collect();
    let ys: Vec<_> = (0..5).map(|i| image((3, 4, 4), 20 + i)).collect();
    let a = eval_loss(&m, &views(&xs), &views(&ys)).unwrap();
    let (mut xr, mut yr) = (xs.clone(), ys.clone());
    xr.reverse();
    yr.reverse();
    let b = eval_loss(&m, &views(&xr), &views(&yr)).unwrap();
    assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
}

#[test]
fn adam_first_step() {
    let cfg = TrainConfig::default();
    let mut theta = vec![0.0f64];
    let mut st = AdamState::new(1);
    adam_step(&mut theta, &[1.0], &mut st, &cfg).unwrap();
    let expect = -1e-3 * 1.0 / (1.0 + 1e-8);
    assert!((theta[0] - expect).abs() < 1e-15);
    assert!((theta[0] + 9.9999e-4).abs() < 1e-8);

    let mut theta = vec![0.7f64, -0.2];
    let mut st = AdamState::new(2);
    adam_step(&mut theta, &[0.0, 0.0], &mut st, &cfg).unwrap();
    assert_eq!(theta, vec![0.7, -0.2]);

    for g in [-3.0, -1e-6, 2e-4, 50.0] {
        let mut theta = vec![1.0f64];
        let mut st = AdamState::new(1);
        adam_step(&mut theta, &[g], &mut st, &cfg).unwrap();
        assert_eq!((theta[0] - 1.0).signum(), -f64::signum(g));
    }
    assert!(adam_step(&mut [0.0f64; 2], &[1.0], &mut AdamState::new(2), &cfg).is_err());
}

fn gaussian_pairs<T: Real>(n: usize, seed: u64) -> Pairs<T> {
    let mut r = rng::stream(seed, 5);
    Pairs {
        x: (0..n)
            .map(|_| {
                Array3::from_shape_fn((1, 8, 8), |_| {
                    let v: f64 = StandardNormal.sample(&mut r);
                    T::c(v)
                })
            })
            .collect(),
        y: (0..n).map(|_| Array3::from_elem((3, 8, 8), T::c(0.5))).collect(),
    }
}

fn small_cfg() -> FlowConfig {
    FlowConfig {
        levels: 3,
        steps_per_level: 2,
        hidden_channels: 8,
        clamp: 2.0,
        seed: 4,
    }
}

#[test]
fn gaussian_data_reaches_entropy_rate() {
    let train_set = gaussian_pairs::<f32>(512, 1);
    let val = gaussian_pairs::<f32>(512, 2);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let m = FlowModel::<f32>::new(small_cfg(), (1, 8, 8), 3).unwrap();
    let out = train(m, &train_set, &val, &cfg, None).unwrap();
    let nll = nll_per_dim(dataset_loss(&out.model, &val).unwrap(), 64);
    assert!((nll - 1.419).abs() < 0.05, "per-dim NLL {nll}");
}

#[test]
fn training_is_deterministic_and_checkpoints() {
    let data = gaussian_pairs::<f32>(80, 3);
    let val = gaussian_pairs::<f32>(16, 4);
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 2,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("best.ckpt");
    let run = |p: Option<&Path>| {
        let m = FlowModel::<f32>::new(small_cfg(), (1, 8, 8), 3).unwrap();
        train(m, &data, &val, &cfg, p).unwrap()
    };
    let a = run(Some(&ck));
    let b = run(None);
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.history.len(), 3);
    assert!(a.history[0].train_loss.is_none());

    let back = cnf::load::<f32>(&ck).unwrap();
    let va = dataset_loss(&a.model, &val).unwrap();
    let vb = dataset_loss(&back, &val).unwrap();
    assert!((va - vb).abs() <= 1e-6 * va.abs().max(1.0));
    assert_eq!(va, a.history[a.best_epoch].val_loss);

    let csv = dir.path().join("loss.csv");
    write_history(&csv, &a.history).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_loss\n0,,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn rejects_small_sets_and_bad_config() {
    let data = gaussian_pairs::<f32>(10, 3);
    let m = FlowModel::<f32>::new(small_cfg(), (1, 8, 8), 3).unwrap();
    assert!(train(m.clone(), &data, &data, &TrainConfig::default(), None).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(TrainConfig { patience: Some(0), ..TrainConfig::default() }.validate().is_err());
    let nan = TrainConfig {
        learning_rate: 1e30,
        batch_size: 8,
        epochs: 3,
        ..TrainConfig::default()
    };
    let mut m2 = m;
    m2.perturb(0.1, 1);
    match train(m2, &data, &data, &nan, None) {
        Err(Error::NonFiniteLoss { .. }) | Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}
