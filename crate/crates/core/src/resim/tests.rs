use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;

use super::*;
use crate::geomodel::{make_layered_model, GeoConfig};

fn uniform_model(nx: usize, nz: usize, k: f64, phi: f64) -> EarthModel {
    let grid = Grid2D::with_default_extent(nx, nz).unwrap();
    EarthModel {
        grid,
        velocity: Array2::from_elem((nz, nx), 2500.0),
        porosity: Array2::from_elem((nz, nx), phi),
        permeability: Array2::from_elem((nz, nx), k),
        seal_rows: nz / 3..nz / 3 + 2,
        fracture_col: nx / 2 + 2,
        well_col: nx / 2,
        injection_rows: vec![nz - 4, nz - 3],
        seed: 0,
    }
}

fn layered(seed: u64) -> EarthModel {
    make_layered_model(seed, Grid2D::with_default_extent(64, 64).unwrap(), &GeoConfig::default())
        .unwrap()
}

#[test]
fn fractional_flow_values() {
    let p = FluidProps::default();
    assert_eq!(fractional_flow(0.0, &p).unwrap(), 0.0);
    assert_eq!(fractional_flow(1.0, &p).unwrap(), 1.0);
    // equal relative permeabilities cancel: mu_w / (mu_w + mu_g)
    assert_relative_eq!(
        fractional_flow(0.5, &p).unwrap(),
        6e-4 / (6e-4 + 6e-5),
        max_relative = 1e-12
    );
    assert_relative_eq!(fractional_flow(0.5, &p).unwrap(), 0.9091, epsilon = 1e-4);
    assert!(fractional_flow(0.3, &p).unwrap() < fractional_flow(0.6, &p).unwrap());
    assert!(fractional_flow(-0.1, &p).is_err());
    assert!(fractional_flow(1.1, &p).is_err());
}

#[test]
fn invalid_props_rejected() {
    let bad = FluidProps {
        mu_co2: 1e-3,
        ..FluidProps::default()
    };
    assert!(bad.validate().is_err());
    let bad = FluidProps {
        rho_co2: 1100.0,
        ..FluidProps::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn laplace_with_constant_boundary() {
    let model = uniform_model(16, 16, 1e-12, 0.25);
    let props = FluidProps {
        gravity: 0.0,
        ..FluidProps::default()
    };
    let schedule = InjectionSchedule {
        rate: 0.0,
        ..InjectionSchedule::default()
    };
    let s = Array2::zeros((16, 16));
    let p = pressure_solve(&model, &s, &props, &schedule).unwrap();
    for v in p.iter() {
        assert_relative_eq!(*v, props.top_pressure, max_relative = 1e-12);
    }
}

#[test]
fn hydrostatic_gradient_with_uniform_fluids() {
    let model = uniform_model(12, 24, 1e-12, 0.25);
    let props = FluidProps::default();
    let schedule = InjectionSchedule {
        rate: 0.0,
        ..InjectionSchedule::default()
    };
    let s = Array2::from_elem((24, 12), 0.5);
    let p = pressure_solve(&model, &s, &props, &schedule).unwrap();
    let lg = props.mobility_co2(0.5);
    let lw = props.mobility_brine(0.5);
    let rho_avg = (lg * props.rho_co2 + lw * props.rho_brine) / (lg + lw);
    // 1D column oracle: brine head across the half cell at the top, then
    // p(z) = p_0 + rho_avg g (z - z_0)
    let z0 = model.grid.depth(0);
    for iz in 0..24 {
        let oracle = props.top_pressure
            + props.rho_brine * props.gravity * z0
            + rho_avg * props.gravity * (model.grid.depth(iz) - z0);
        assert_relative_eq!(p[[iz, 5]], oracle, max_relative = 1e-6);
    }
    for iz in 1..24 {
        let grad = (p[[iz, 3]] - p[[iz - 1, 3]]) / model.grid.dz;
        assert!((grad - rho_avg * props.gravity).abs() <= 0.01 * rho_avg * props.gravity);
    }
}

#[test]
fn doubling_permeability_halves_overpressure() {
    let props = FluidProps::default();
    let schedule = InjectionSchedule::default();
    let m1 = uniform_model(16, 16, 1e-12, 0.25);
    let mut m2 = m1.clone();
    m2.permeability.mapv_inplace(|k| 2.0 * k);
    let s = Array2::zeros((16, 16));
    let hydro = hydrostatic_pressure(&m1.grid, &props);
    let d1 = pressure_solve(&m1, &s, &props, &schedule).unwrap() - &hydro;
    let d2 = pressure_solve(&m2, &s, &props, &schedule).unwrap() - &hydro;
    let peak = d1.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(peak > 0.0);
    for (a, b) in d1.iter().zip(d2.iter()) {
        assert!((a - 2.0 * b).abs() <= 1e-6 * peak);
    }
}

#[test]
fn cg_failure_is_reported() {
    let model = layered(3);
    let props = FluidProps::default();
    let trans = Transmissibility::new(model.grid, &model.permeability);
    let source = source_field(&model, &props, &InjectionSchedule::default());
    let s = Array2::zeros(model.grid.shape());
    let sys = PressureSystem::assemble(&trans, &s, &source, &props, None);
    let mut x = vec![0.0; sys.len()];
    match sys.solve(&mut x, 1e-14, 2) {
        Err(Error::SolverFailure { iterations, residual }) => {
            assert_eq!(iterations, 2);
            assert!(residual > 1e-14);
        }
        other => panic!("expected solver failure, got {other:?}"),
    }
}

#[test]
fn zero_flux_leaves_saturation_unchanged() {
    let model = uniform_model(10, 10, 1e-12, 0.25);
    let props = FluidProps {
        gravity: 0.0,
        ..FluidProps::default()
    };
    let flow = FlowField::zeros(&model.grid);
    let s = Array2::from_shape_fn((10, 10), |(i, j)| ((i * 10 + j) as f64 / 100.0).min(1.0));
    let out = transport_step(&s, &flow, &model, &props, 1e6);
    assert_eq!(out.saturation, s);
    assert_eq!(out.injected, 0.0);
    assert_eq!(out.outflow, 0.0);
}

/// Front saturation of the Welge tangent, `f(s)/s = f'(s)`, by bisection.
fn welge_front(props: &FluidProps) -> (f64, f64) {
    let f = |s: f64| props.frac_flow(s);
    let df = |s: f64| (f(s + 1e-7) - f(s - 1e-7)) / 2e-7;
    let g = |s: f64| f(s) / s - df(s);
    let (mut lo, mut hi) = (0.05, 0.999);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sf = 0.5 * (lo + hi);
    (sf, df(sf))
}

#[test]
fn buckley_leverett_front_matches_welge() {
    let nx = 400;
    let nz = 8;
    let mut model = uniform_model(nx, nz, 1e-12, 0.25);
    model.grid = Grid2D::new(nx, nz, 1.0, 1.0).unwrap();
    let props = FluidProps {
        gravity: 0.0,
        ..FluidProps::default()
    };
    let u = 1e-6;
    let mut flow = FlowField::zeros(&model.grid);
    flow.flux_x.fill(u);
    flow.inflow_saturation = 1.0;
    let pore_volume_total = 0.25 * nx as f64;
    let pvi = 0.3;
    let t = pvi * pore_volume_total / u;
    let s0 = Array2::zeros((nz, nx));
    let out = transport_step(&s0, &flow, &model, &props, t);

    let (sf, dfs) = welge_front(&props);
    let x_front = dfs * pvi * nx as f64;
    // numerical front: where the profile crosses half the shock height
    let row = out.saturation.row(3);
    let idx = row.iter().position(|&v| v < 0.5 * sf).unwrap();
    let (a, b) = (row[idx - 1], row[idx]);
    let x_num = (idx as f64 - 0.5) + (a - 0.5 * sf) / (a - b);
    let rel = (x_num - x_front).abs() / x_front;
    assert!(rel < 0.05, "front {x_num:.2} vs Welge {x_front:.2} ({rel:.3})");
}

fn random_flow(model: &EarthModel, s: &Array2<f64>, props: &FluidProps) -> FlowField {
    let schedule = InjectionSchedule::default();
    let trans = Transmissibility::new(model.grid, &model.permeability);
    let source = source_field(model, props, &schedule);
    let mut barrier = Array2::from_elem(model.grid.shape(), false);
    for iz in model.seal_rows.clone() {
        barrier.row_mut(iz).fill(true);
    }
    let sys = PressureSystem::assemble(&trans, s, &source, props, Some(&barrier));
    let mut delta = vec![0.0; sys.len()];
    sys.solve(&mut delta, CG_TOLERANCE, 100_000).unwrap();
    let (flux_x, flux_z) = fluxes_from(&sys, &delta, &model.grid);
    FlowField {
        flux_x,
        flux_z,
        source,
        inflow_saturation: 0.0,
        barrier,
        closed_top: true,
    }
}

#[test]
fn transport_conserves_volume() {
    let model = layered(11);
    let props = FluidProps::default();
    let mut s = Array2::zeros(model.grid.shape());
    for iz in model.seal_rows.end..model.grid.nz {
        for ix in 20..40 {
            s[[iz, ix]] = 0.3 + 0.2 * ((iz + ix) % 3) as f64;
        }
    }
    let flow = random_flow(&model, &s, &props);
    let pv = model.porosity.mapv(|p| p * model.grid.cell_volume());
    let before = (&s * &pv).sum();
    let out = transport_step(&s, &flow, &model, &props, 3e6);
    assert!(out.substeps > 1);
    let after = (&out.saturation * &pv).sum();
    let change = after - before;
    let expected = out.injected - out.outflow;
    let scale = out.injected.abs().max(before).max(1e-30);
    assert!(
        (change - expected).abs() <= 1e-10 * scale,
        "change {change:e} vs {expected:e}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transport_preserves_bounds(seed in 0u64..1000, fill in 0.0f64..1.0) {
        let model = layered(seed);
        let props = FluidProps::default();
        let mut rng = crate::rng::stream(seed, 99);
        use rand::Rng;
        let s = Array2::from_shape_fn(model.grid.shape(), |(iz, _)| {
            if model.seal_rows.contains(&iz) { 0.0 } else { (rng.random::<f64>() * fill).min(1.0) }
        });
        let flow = random_flow(&model, &s, &props);
        let out = transport_step(&s, &flow, &model, &props, 1e7);
        prop_assert!(out.bound_violation <= 1e-9, "violation {}", out.bound_violation);
        prop_assert!(out.saturation.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn max_above_seal(model: &EarthModel, s: &Array2<f64>) -> f64 {
    s.rows()
        .into_iter()
        .take(model.seal_rows.start)
        .flat_map(|r| r.to_vec())
        .fold(0.0f64, f64::max)
}

#[test]
fn intact_seal_holds_the_plume() {
    let model = layered(5);
    let res = simulate(
        &model,
        &FluidProps::default(),
        &InjectionSchedule::default(),
        &LeakConfig::default(),
    )
    .unwrap();
    assert!(!res.leak_triggered);
    assert!(res.trigger_time.is_none());
    for s in &res.saturation {
        assert!(max_above_seal(&model, s) <= 1e-6);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(res.final_saturation().iter().any(|&v| v > 0.05));
    assert!(res.mass_balance_error() <= 1e-2);
    assert!(res.mass_in_domain <= res.mass_injected * (1.0 + 1e-9));
    for &(inj, dom, out) in &res.mass_history {
        if inj > 0.0 {
            assert!((dom + out - inj).abs() <= 1e-2 * inj);
        }
    }
}

#[test]
fn zero_threshold_leaks_through_the_fracture() {
    let model = layered(5);
    let leak = LeakConfig {
        enabled: true,
        p_threshold: 0.0,
        ..LeakConfig::default()
    };
    let res = simulate(&model, &FluidProps::default(), &InjectionSchedule::default(), &leak).unwrap();
    assert!(res.leak_triggered);
    assert_eq!(res.trigger_time, Some(0.0));
    assert!(max_above_seal(&model, res.final_saturation()) > 0.01);
    assert!(res.mass_balance_error() <= 1e-2);
}

#[test]
fn no_injection_stays_hydrostatic() {
    let model = layered(2);
    let props = FluidProps::default();
    let schedule = InjectionSchedule {
        rate: 0.0,
        ..InjectionSchedule::default()
    };
    let res = simulate(&model, &props, &schedule, &LeakConfig::default()).unwrap();
    let hydro = hydrostatic_pressure(&model.grid, &props);
    for (s, p) in res.saturation.iter().zip(&res.pressure) {
        assert!(s.iter().all(|&v| v == 0.0));
        for (a, b) in p.iter().zip(hydro.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }
    assert_eq!(res.mass_injected, 0.0);
}

#[test]
fn snapshots_follow_the_schedule() {
    let model = layered(4);
    let schedule = InjectionSchedule {
        n_report: 3,
        n_pressure_steps: 7,
        ..InjectionSchedule::default()
    };
    let res = simulate(&model, &FluidProps::default(), &schedule, &LeakConfig::default()).unwrap();
    assert_eq!(res.times.len(), 3);
    assert_relative_eq!(res.times[1], 4.0, max_relative = 1e-12);
    assert_relative_eq!(res.times[2], 8.0, max_relative = 1e-12);
    assert_eq!(res.saturation.len(), 3);
    assert_eq!(res.pressure.len(), 3);
}

#[test]
fn raising_threshold_never_triggers_earlier() {
    let model = layered(9);
    let props = FluidProps::default();
    let schedule = InjectionSchedule {
        n_pressure_steps: 16,
        ..InjectionSchedule::default()
    };
    let base = calibrate_threshold(&model, &props, &schedule, 1.0).unwrap();
    assert!(base > 0.0);
    let mut last = -1.0;
    for frac in [0.0, 0.5, 0.9, 0.99, 1.01, 1.5, 3.0] {
        let leak = LeakConfig {
            enabled: true,
            p_threshold: frac * base,
            ..LeakConfig::default()
        };
        let res = simulate(&model, &props, &schedule, &leak).unwrap();
        let t = res.trigger_time.unwrap_or(f64::INFINITY);
        assert!(t >= last, "threshold {frac} triggered at {t} before {last}");
        last = t;
    }
}

#[test]
fn simulate_is_deterministic() {
    let model = layered(12);
    let leak = LeakConfig {
        enabled: true,
        p_threshold: 0.0,
        ..LeakConfig::default()
    };
    let a = simulate(&model, &FluidProps::default(), &InjectionSchedule::default(), &leak).unwrap();
    let b = simulate(&model, &FluidProps::default(), &InjectionSchedule::default(), &leak).unwrap();
    assert_eq!(a, b);
}
