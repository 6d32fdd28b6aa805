//! Incompressible, immiscible CO2/brine flow (IMPES) with a one-shot
//! pressure-triggered fracture through the seal.

mod pressure;
mod transport;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomodel::{EarthModel, Grid2D};

pub use pressure::{PressureSystem, Transmissibility, CG_TOLERANCE};
pub use transport::{transport_step, FlowField, TransportOutcome, CFL_SAFETY};

pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

/// 1 Mt/yr spread over 1000 m of out-of-plane thickness, kg/s per m.
pub const DEFAULT_RATE: f64 = 1.0e9 / SECONDS_PER_YEAR / 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidProps {
    pub mu_brine: f64,
    pub mu_co2: f64,
    pub rho_brine: f64,
    pub rho_co2: f64,
    pub corey_exponent: f64,
    pub gravity: f64,
    /// Pressure at the top boundary, Pa.
    pub top_pressure: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        Self {
            mu_brine: 6e-4,
            mu_co2: 6e-5,
            rho_brine: 1020.0,
            rho_co2: 700.0,
            corey_exponent: 2.0,
            gravity: 9.81,
            top_pressure: 1.0e5,
        }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mu_brine,
            self.mu_co2,
            self.rho_brine,
            self.rho_co2,
            self.corey_exponent,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("fluid properties must be strictly positive"));
        }
        if self.mu_co2 >= self.mu_brine {
            return Err(Error::invalid("CO2 must be less viscous than brine"));
        }
        if self.rho_co2 >= self.rho_brine {
            return Err(Error::invalid("CO2 must be lighter than brine"));
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::invalid("gravity must be non-negative"));
        }
        Ok(())
    }

    fn corey(&self, s: f64) -> f64 {
        if self.corey_exponent == 2.0 {
            s * s
        } else {
            s.max(0.0).powf(self.corey_exponent)
        }
    }

    pub fn mobility_co2(&self, s: f64) -> f64 {
        self.corey(s) / self.mu_co2
    }

    pub fn mobility_brine(&self, s: f64) -> f64 {
        self.corey(1.0 - s) / self.mu_brine
    }

    pub(crate) fn frac_flow(&self, s: f64) -> f64 {
        let lg = self.mobility_co2(s);
        let lw = self.mobility_brine(s);
        if lg + lw > 0.0 {
            lg / (lg + lw)
        } else {
            0.0
        }
    }
}

/// Fraction of the total flux carried by CO2 at saturation `s`.
pub fn fractional_flow(s: f64, props: &FluidProps) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("saturation {s} outside [0, 1]")));
    }
    Ok(props.frac_flow(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionSchedule {
    /// kg/s per meter of out-of-plane thickness.
    pub rate: f64,
    pub duration_years: f64,
    /// Number of saved snapshots, initial state included.
    pub n_report: usize,
    /// Number of implicit pressure updates over the run.
    pub n_pressure_steps: usize,
}

impl Default for InjectionSchedule {
    fn default() -> Self {
        Self {
            rate: DEFAULT_RATE,
            duration_years: 8.0,
            n_report: 5,
            n_pressure_steps: 16,
        }
    }
}

impl InjectionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid("injection rate must be non-negative"));
        }
        if !(self.duration_years > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if self.n_report < 2 {
            return Err(Error::invalid("n_report must be >= 2"));
        }
        if self.n_pressure_steps == 0 {
            return Err(Error::invalid("n_pressure_steps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakConfig {
    pub enabled: bool,
    /// Overpressure at the seal base above the injector that opens the
    /// fracture, Pa.
    pub p_threshold: f64,
    pub k_multiplier: f64,
}

impl Default for LeakConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            p_threshold: 1.0e6,
            k_multiplier: 1000.0,
        }
    }
}

impl LeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_threshold >= 0.0 && self.p_threshold.is_finite()) {
            return Err(Error::invalid("p_threshold must be non-negative"));
        }
        if !(self.k_multiplier > 1.0) {
            return Err(Error::invalid("k_multiplier must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Snapshot times, years.
    pub times: Vec<f64>,
    pub saturation: Vec<Array2<f64>>,
    /// Absolute pressure, Pa.
    pub pressure: Vec<Array2<f64>>,
    pub leak_triggered: bool,
    pub trigger_time: Option<f64>,
    /// kg per m of thickness.
    pub mass_injected: f64,
    pub mass_in_domain: f64,
    pub mass_out: f64,
    /// Mass balance per snapshot: (injected, in domain, out).
    pub mass_history: Vec<(f64, f64, f64)>,
}

impl SimResult {
    pub fn final_saturation(&self) -> &Array2<f64> {
        self.saturation.last().expect("at least two snapshots")
    }

    pub fn final_pressure(&self) -> &Array2<f64> {
        self.pressure.last().expect("at least two snapshots")
    }

    /// `|in_domain + out - injected| / injected` at the end of the run.
    pub fn mass_balance_error(&self) -> f64 {
        if self.mass_injected == 0.0 {
            return (self.mass_in_domain + self.mass_out).abs();
        }
        (self.mass_in_domain + self.mass_out - self.mass_injected).abs() / self.mass_injected
    }
}

/// Brine hydrostatic pressure at cell centers.
pub fn hydrostatic_pressure(grid: &Grid2D, props: &FluidProps) -> Array2<f64> {
    Array2::from_shape_fn(grid.shape(), |(iz, _)| {
        props.top_pressure + props.rho_brine * props.gravity * grid.depth(iz)
    })
}

/// Injected CO2 volume rate per cell (m³/s per m), split over the
/// perforations in proportion to permeability.
pub fn source_field(model: &EarthModel, props: &FluidProps, schedule: &InjectionSchedule) -> Array2<f64> {
    let mut q = Array2::zeros(model.grid.shape());
    let total_k: f64 = model
        .injection_rows
        .iter()
        .map(|&r| model.permeability[[r, model.well_col]])
        .sum();
    if total_k > 0.0 && schedule.rate > 0.0 {
        let volume_rate = schedule.rate / props.rho_co2;
        for &r in &model.injection_rows {
            q[[r, model.well_col]] = volume_rate * model.permeability[[r, model.well_col]] / total_k;
        }
    }
    q
}

fn check_shape(model: &EarthModel, s: &Array2<f64>) -> Result<()> {
    if s.dim() != model.grid.shape() {
        return Err(Error::invalid(format!(
            "saturation shape {:?} does not match grid {:?}",
            s.dim(),
            model.grid.shape()
        )));
    }
    Ok(())
}

fn max_cg_iterations(grid: &Grid2D) -> usize {
    (10 * grid.cells()).max(1000)
}

/// Absolute pressure for saturation `s` with the scheduled injection.
pub fn pressure_solve(
    model: &EarthModel,
    s: &Array2<f64>,
    props: &FluidProps,
    schedule: &InjectionSchedule,
) -> Result<Array2<f64>> {
    props.validate()?;
    schedule.validate()?;
    check_shape(model, s)?;
    let trans = Transmissibility::new(model.grid, &model.permeability);
    let source = source_field(model, props, schedule);
    let sys = PressureSystem::assemble(&trans, s, &source, props, None);
    let mut delta = vec![0.0; sys.len()];
    sys.solve(&mut delta, CG_TOLERANCE, max_cg_iterations(&model.grid))?;
    let hydro = hydrostatic_pressure(&model.grid, props);
    Ok(Array2::from_shape_vec(model.grid.shape(), delta).expect("grid-sized") + hydro)
}

/// Face fluxes implied by an overpressure solution of `sys`.
fn fluxes_from(sys: &PressureSystem, delta: &[f64], grid: &Grid2D) -> (Array2<f64>, Array2<f64>) {
    let (nz, nx) = grid.shape();
    let d = |iz: usize, ix: usize| delta[iz * nx + ix];
    let mut fx = Array2::zeros((nz, nx + 1));
    for iz in 0..nz {
        for ix in 1..nx {
            fx[[iz, ix]] = sys.face_x[[iz, ix - 1]] * (d(iz, ix - 1) - d(iz, ix));
        }
    }
    let mut fz = Array2::zeros((nz + 1, nx));
    for ix in 0..nx {
        fz[[0, ix]] = -sys.face_top[ix] * d(0, ix);
        for iz in 1..nz {
            fz[[iz, ix]] =
                sys.face_z[[iz - 1, ix]] * ((d(iz - 1, ix) - d(iz, ix)) + sys.grav_z[[iz - 1, ix]]);
        }
    }
    (fx, fz)
}

/// Trigger cell: the seal's lowest cell in the injector column.
pub fn trigger_cell(model: &EarthModel) -> (usize, usize) {
    (model.seal_rows.end - 1, model.well_col)
}

struct Run<'a> {
    model: &'a EarthModel,
    props: &'a FluidProps,
    perm: Array2<f64>,
    trans: Transmissibility,
    source: Array2<f64>,
    barrier: Array2<bool>,
    delta: Vec<f64>,
    max_iter: usize,
}

impl Run<'_> {
    fn solve(&mut self, s: &Array2<f64>) -> Result<PressureSystem> {
        let sys = PressureSystem::assemble(&self.trans, s, &self.source, self.props, Some(&self.barrier));
        sys.solve(&mut self.delta, CG_TOLERANCE, self.max_iter)?;
        Ok(sys)
    }

    fn overpressure_at(&self, cell: (usize, usize)) -> f64 {
        self.delta[cell.0 * self.model.grid.nx + cell.1]
    }

    fn fracture(&mut self, k_multiplier: f64) {
        let col = self.model.fracture_col;
        for iz in self.model.seal_rows.clone() {
            self.perm[[iz, col]] *= k_multiplier;
            self.barrier[[iz, col]] = false;
        }
        self.trans = Transmissibility::new(self.model.grid, &self.perm);
    }

    fn pressure_field(&self) -> Array2<f64> {
        let grid = &self.model.grid;
        Array2::from_shape_vec(grid.shape(), self.delta.clone()).expect("grid-sized")
            + hydrostatic_pressure(grid, self.props)
    }
}

/// Run one injection scenario from a brine-filled initial state.
pub fn simulate(
    model: &EarthModel,
    props: &FluidProps,
    schedule: &InjectionSchedule,
    leak: &LeakConfig,
) -> Result<SimResult> {
    props.validate()?;
    schedule.validate()?;
    leak.validate()?;
    let grid = model.grid;
    let (nz, nx) = grid.shape();
    for f in [&model.porosity, &model.permeability] {
        if f.dim() != (nz, nx) {
            return Err(Error::invalid("model fields do not match the grid"));
        }
    }

    let mut barrier = Array2::from_elem((nz, nx), false);
    for iz in model.seal_rows.clone() {
        barrier.row_mut(iz).fill(true);
    }
    let mut run = Run {
        model,
        props,
        perm: model.permeability.clone(),
        trans: Transmissibility::new(grid, &model.permeability),
        source: source_field(model, props, schedule),
        barrier,
        delta: vec![0.0; grid.cells()],
        max_iter: max_cg_iterations(&grid),
    };

    let total = schedule.duration_years * SECONDS_PER_YEAR;
    let n_seg = schedule.n_pressure_steps;
    let mut events: Vec<f64> = (0..=n_seg).map(|k| total * k as f64 / n_seg as f64).collect();
    let reports: Vec<f64> = (0..schedule.n_report)
        .map(|k| total * k as f64 / (schedule.n_report - 1) as f64)
        .collect();
    events.extend(reports.iter().copied());
    events.sort_by(|a, b| a.total_cmp(b));
    events.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * total);

    let rho = props.rho_co2;
    let pore_volume = model.porosity.mapv(|phi| phi * grid.cell_volume());
    let mut s = Array2::<f64>::zeros((nz, nx));
    let mut injected = 0.0;
    let mut out = 0.0;
    let mut triggered = false;
    let mut trigger_time = None;
    let mut result = SimResult {
        times: Vec::new(),
        saturation: Vec::new(),
        pressure: Vec::new(),
        leak_triggered: false,
        trigger_time: None,
        mass_injected: 0.0,
        mass_in_domain: 0.0,
        mass_out: 0.0,
        mass_history: Vec::new(),
    };
    let mut next_report = 0;

    for (i, &t) in events.iter().enumerate() {
        let mut sys = run.solve(&s)?;
        if leak.enabled && !triggered && run.overpressure_at(trigger_cell(model)) > leak.p_threshold {
            triggered = true;
            trigger_time = Some(t / SECONDS_PER_YEAR);
            run.fracture(leak.k_multiplier);
            sys = run.solve(&s)?;
        }
        if next_report < reports.len() && (t - reports[next_report]).abs() <= 1e-9 * total {
            let in_domain = rho * (&s * &pore_volume).sum();
            result.times.push(t / SECONDS_PER_YEAR);
            result.saturation.push(s.clone());
            result.pressure.push(run.pressure_field());
            result
                .mass_history
                .push((rho * injected, in_domain, rho * out));
            next_report += 1;
        }
        let Some(&t_next) = events.get(i + 1) else {
            break;
        };
        let (fx, fz) = fluxes_from(&sys, &run.delta, &grid);
        let flow = FlowField {
            flux_x: fx,
            flux_z: fz,
            source: run.source.clone(),
            inflow_saturation: 0.0,
            barrier: run.barrier.clone(),
            closed_top: true,
        };
        let step = transport::transport_with_permeability(
            &s,
            &flow,
            &grid,
            &model.porosity,
            &run.perm,
            props,
            t_next - t,
        );
        s = step.saturation;
        injected += step.injected;
        out += step.outflow;
    }

    result.leak_triggered = triggered;
    result.trigger_time = trigger_time;
    result.mass_injected = rho * injected;
    result.mass_in_domain = rho * (&s * &pore_volume).sum();
    result.mass_out = rho * out;
    Ok(result)
}

/// Leak threshold for `model`: `fraction` of the overpressure at the
/// trigger cell when injection starts.
pub fn calibrate_threshold(
    model: &EarthModel,
    props: &FluidProps,
    schedule: &InjectionSchedule,
    fraction: f64,
) -> Result<f64> {
    let s = Array2::zeros(model.grid.shape());
    let p = pressure_solve(model, &s, props, schedule)?;
    let hydro = hydrostatic_pressure(&model.grid, props);
    let cell = trigger_cell(model);
    Ok(fraction * (p[cell] - hydro[cell]).max(0.0))
}

#[cfg(test)]
mod tests;
