//! Synthetic layered earth models and velocity-based rock physics.
//!
//! A model is a stack of sub-horizontal layers with a flat low-permeability
//! seal at roughly a third of the depth, a reservoir below it, and a single
//! pre-existing fracture column through the seal next to the injector.

use std::f64::consts::PI;
use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const V_MIN: f64 = 1500.0;
pub const V_MAX: f64 = 5500.0;

/// Physical extent of the default section (lateral × depth), meters.
pub const DEFAULT_WIDTH_M: f64 = 3200.0;
pub const DEFAULT_DEPTH_M: f64 = 2131.0;

/// Minimum number of rows above the seal and below it.
pub const MIN_ZONE_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64) -> Result<Self> {
        if nx < 8 || nz < 8 {
            return Err(Error::invalid(format!(
                "grid must be at least 8x8, got {nx}x{nz}"
            )));
        }
        if !(dx > 0.0 && dz > 0.0 && dx.is_finite() && dz.is_finite()) {
            return Err(Error::invalid(format!(
                "cell sizes must be positive, got dx={dx}, dz={dz}"
            )));
        }
        Ok(Self { nx, nz, dx, dz })
    }

    /// Grid covering the default 3200 m × 2131 m section.
    pub fn with_default_extent(nx: usize, nz: usize) -> Result<Self> {
        Self::new(
            nx,
            nz,
            DEFAULT_WIDTH_M / nx.max(1) as f64,
            DEFAULT_DEPTH_M / nz.max(1) as f64,
        )
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    /// Depth of the center of row `iz`.
    pub fn depth(&self, iz: usize) -> f64 {
        (iz as f64 + 0.5) * self.dz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dz
    }
}

/// Clamped linear velocity → porosity law followed by Kozeny-Carman.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RockPhysics {
    pub phi_max: f64,
    pub phi_min: f64,
    /// Velocity at which porosity equals `phi_max`, m/s.
    pub v_ref: f64,
    /// Porosity drop per m/s.
    pub slope: f64,
    pub grain_diameter: f64,
}

impl Default for RockPhysics {
    fn default() -> Self {
        Self {
            phi_max: 0.36,
            phi_min: 0.02,
            v_ref: 1500.0,
            slope: 1.1e-4,
            grain_diameter: 1e-4,
        }
    }
}

impl RockPhysics {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_min > 0.0 && self.phi_min < self.phi_max && self.phi_max <= 0.4) {
            return Err(Error::invalid(format!(
                "porosity bounds must satisfy 0 < phi_min < phi_max <= 0.4, got [{}, {}]",
                self.phi_min, self.phi_max
            )));
        }
        if !(self.slope >= 0.0 && self.grain_diameter > 0.0) {
            return Err(Error::invalid(
                "slope must be non-negative and grain_diameter positive",
            ));
        }
        Ok(())
    }

    pub fn porosity(&self, v: f64) -> Result<f64> {
        velocity_to_porosity_with(v, self)
    }

    pub fn permeability(&self, v: f64) -> Result<f64> {
        porosity_to_permeability(self.porosity(v)?, self.grain_diameter)
    }
}

/// Porosity from P-wave velocity with the default law.
pub fn velocity_to_porosity(v: f64) -> Result<f64> {
    velocity_to_porosity_with(v, &RockPhysics::default())
}

pub fn velocity_to_porosity_with(v: f64, law: &RockPhysics) -> Result<f64> {
    if !(V_MIN..=V_MAX).contains(&v) {
        return Err(Error::invalid(format!(
            "velocity {v} m/s outside [{V_MIN}, {V_MAX}]"
        )));
    }
    let phi = law.phi_max - law.slope * (v - law.v_ref);
    Ok(phi.clamp(law.phi_min, law.phi_max))
}

/// Kozeny-Carman permeability (m²) for a packed bed of grains of diameter
/// `d_grain` (m): `K = d² φ³ / (180 (1-φ)²)`.
pub fn porosity_to_permeability(phi: f64, d_grain: f64) -> Result<f64> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::invalid(format!("porosity {phi} outside (0, 1)")));
    }
    if !(d_grain > 0.0) {
        return Err(Error::invalid(format!(
            "grain diameter must be positive, got {d_grain}"
        )));
    }
    Ok(d_grain * d_grain * phi.powi(3) / (180.0 * (1.0 - phi).powi(2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoConfig {
    /// Total layer count, seal included.
    pub n_layers: usize,
    /// Depth of the seal top as a fraction of the section depth.
    pub seal_depth_fraction: f64,
    pub seal_thickness_m: f64,
    pub overburden_velocity: [f64; 2],
    pub sand_velocity: [f64; 2],
    pub tight_velocity: [f64; 2],
    /// Probability that a reservoir layer is a tight baffle.
    pub tight_fraction: f64,
    pub seal_velocity: [f64; 2],
    pub undulation_m: f64,
    pub cell_noise_velocity: f64,
    /// Seal permeability cap relative to the median reservoir permeability.
    pub seal_perm_ratio: f64,
    /// Lateral distance range between injector and fracture, meters.
    pub fracture_offset_m: [f64; 2],
    /// Lateral window (fractions of width) the injector is placed in.
    pub well_window: [f64; 2],
    pub rock: RockPhysics,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            n_layers: 10,
            seal_depth_fraction: 0.33,
            seal_thickness_m: 130.0,
            overburden_velocity: [2100.0, 3400.0],
            sand_velocity: [2300.0, 2750.0],
            tight_velocity: [3100.0, 3500.0],
            tight_fraction: 0.25,
            seal_velocity: [4700.0, 5300.0],
            undulation_m: 40.0,
            cell_noise_velocity: 40.0,
            seal_perm_ratio: 0.01,
            fracture_offset_m: [75.0, 200.0],
            well_window: [0.3, 0.7],
            rock: RockPhysics::default(),
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 3 {
            return Err(Error::invalid(format!(
                "n_layers must be >= 3, got {}",
                self.n_layers
            )));
        }
        if !(self.seal_depth_fraction > 0.0 && self.seal_depth_fraction < 1.0) {
            return Err(Error::invalid("seal_depth_fraction must lie in (0, 1)"));
        }
        if !(self.seal_thickness_m > 0.0) {
            return Err(Error::invalid("seal_thickness_m must be positive"));
        }
        for (name, r) in [
            ("overburden_velocity", self.overburden_velocity),
            ("sand_velocity", self.sand_velocity),
            ("tight_velocity", self.tight_velocity),
            ("seal_velocity", self.seal_velocity),
        ] {
            if !(r[0] <= r[1] && r[0] >= V_MIN && r[1] <= V_MAX) {
                return Err(Error::invalid(format!(
                    "{name} must be an ordered range inside [{V_MIN}, {V_MAX}]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.tight_fraction) {
            return Err(Error::invalid("tight_fraction must lie in [0, 1]"));
        }
        if !(self.seal_perm_ratio > 0.0 && self.seal_perm_ratio <= 0.01) {
            return Err(Error::invalid("seal_perm_ratio must lie in (0, 0.01]"));
        }
        if !(self.fracture_offset_m[0] >= 0.0 && self.fracture_offset_m[0] <= self.fracture_offset_m[1])
        {
            return Err(Error::invalid("fracture_offset_m must be an ordered range"));
        }
        if !(0.0 <= self.well_window[0]
            && self.well_window[0] < self.well_window[1]
            && self.well_window[1] <= 1.0)
        {
            return Err(Error::invalid("well_window must be an ordered range in [0, 1]"));
        }
        if !(self.cell_noise_velocity >= 0.0 && self.undulation_m >= 0.0) {
            return Err(Error::invalid("noise and undulation amplitudes must be >= 0"));
        }
        self.rock.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub grid: Grid2D,
    /// m/s, shape (nz, nx).
    pub velocity: Array2<f64>,
    pub porosity: Array2<f64>,
    /// m².
    pub permeability: Array2<f64>,
    pub seal_rows: Range<usize>,
    pub fracture_col: usize,
    pub well_col: usize,
    /// Perforated rows in `well_col`.
    pub injection_rows: Vec<usize>,
    pub seed: u64,
}

impl EarthModel {
    /// Median permeability of the rows below the seal.
    pub fn median_reservoir_permeability(&self) -> f64 {
        let mut ks: Vec<f64> = self
            .permeability
            .rows()
            .into_iter()
            .skip(self.seal_rows.end)
            .flat_map(|r| r.to_vec())
            .collect();
        median(&mut ks)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let shape = self.grid.shape();
        for (name, f) in [
            ("velocity", &self.velocity),
            ("porosity", &self.porosity),
            ("permeability", &self.permeability),
        ] {
            if f.dim() != shape {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, grid is {:?}",
                    f.dim(),
                    shape
                )));
            }
        }
        if self.velocity.iter().any(|v| !(V_MIN..=V_MAX).contains(v)) {
            return Err(Error::invalid("velocity outside [1500, 5500] m/s"));
        }
        if self.porosity.iter().any(|&p| !(p > 0.0 && p <= 0.4)) {
            return Err(Error::invalid("porosity outside (0, 0.4]"));
        }
        if self.permeability.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::invalid("non-positive permeability"));
        }
        if self.seal_rows.start < MIN_ZONE_ROWS
            || self.seal_rows.end + MIN_ZONE_ROWS > self.grid.nz
            || self.seal_rows.is_empty()
        {
            return Err(Error::invalid(format!(
                "seal rows {:?} leave too little room in {} rows",
                self.seal_rows, self.grid.nz
            )));
        }
        let median_k = self.median_reservoir_permeability();
        let max_seal = self
            .permeability
            .rows()
            .into_iter()
            .skip(self.seal_rows.start)
            .take(self.seal_rows.len())
            .flat_map(|r| r.to_vec())
            .fold(0.0f64, f64::max);
        if max_seal > 0.01 * median_k * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "seal permeability {max_seal:.3e} exceeds 1% of reservoir median {median_k:.3e}"
            )));
        }
        if self.fracture_col >= self.grid.nx || self.well_col >= self.grid.nx {
            return Err(Error::invalid("well or fracture column out of range"));
        }
        if self.injection_rows.is_empty()
            || self
                .injection_rows
                .iter()
                .any(|&r| r < self.seal_rows.end || r >= self.grid.nz)
        {
            return Err(Error::invalid("injection interval must lie below the seal"));
        }
        let best = self
            .injection_rows
            .iter()
            .map(|&r| self.permeability[[r, self.well_col]])
            .fold(0.0f64, f64::max);
        if best < median_k {
            return Err(Error::invalid(
                "injection interval is not in a high-permeability region",
            ));
        }
        Ok(())
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Interface {
    depth: f64,
    amplitude: f64,
    wavelength: f64,
    phase: f64,
}

impl Interface {
    fn at(&self, x: f64) -> f64 {
        self.depth + self.amplitude * (2.0 * PI * x / self.wavelength + self.phase).sin()
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Seal rows for a grid under `cfg`, or an error when the section cannot
/// fit the overburden, seal and reservoir.
pub fn seal_rows_for(grid: &Grid2D, cfg: &GeoConfig) -> Result<Range<usize>> {
    let top = (cfg.seal_depth_fraction * grid.nz as f64).round() as usize;
    let thickness = ((cfg.seal_thickness_m / grid.dz).round() as usize).max(1);
    let end = top + thickness;
    if top < MIN_ZONE_ROWS || end + MIN_ZONE_ROWS > grid.nz {
        return Err(Error::invalid(format!(
            "grid with {} rows cannot hold {MIN_ZONE_ROWS}+ overburden rows, a {thickness}-row seal \
             at row {top} and {MIN_ZONE_ROWS}+ reservoir rows",
            grid.nz
        )));
    }
    Ok(top..end)
}

/// Seeded layered model; the same `(seed, grid, cfg)` always gives the same
/// model.
pub fn make_layered_model(seed: u64, grid: Grid2D, cfg: &GeoConfig) -> Result<EarthModel> {
    cfg.validate()?;
    let seal = seal_rows_for(&grid, cfg)?;
    let mut rng = rng::stream(seed, rng::GEO);
    let width = grid.nx as f64 * grid.dx;
    let seal_top_m = seal.start as f64 * grid.dz;
    let seal_bot_m = seal.end as f64 * grid.dz;
    let depth_m = grid.nz as f64 * grid.dz;

    let n_over = ((cfg.n_layers - 1) / 2).max(1);
    let n_res = (cfg.n_layers - 1 - n_over).max(1);

    let make_interfaces = |n: usize, lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        // n layers need n-1 interior interfaces
        let mut v: Vec<Interface> = (0..n.saturating_sub(1))
            .map(|_| Interface {
                depth: rng.random_range(lo..hi),
                amplitude: cfg.undulation_m * rng.random_range(0.3..1.0),
                wavelength: width * rng.random_range(0.5..2.0),
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect();
        v.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        v
    };
    let over_ifaces = make_interfaces(n_over, 0.15 * seal_top_m, 0.95 * seal_top_m, &mut rng);
    let res_ifaces = make_interfaces(
        n_res,
        seal_bot_m + 0.05 * (depth_m - seal_bot_m),
        depth_m - 0.05 * (depth_m - seal_bot_m),
        &mut rng,
    );

    // Overburden gets faster with depth; reservoir mixes sands and baffles.
    let over_v: Vec<f64> = (0..n_over)
        .map(|i| {
            let [lo, hi] = cfg.overburden_velocity;
            let trend = lo + (hi - lo) * (i as f64 + 0.5) / n_over as f64;
            (trend + rng.random_range(-0.15..0.15) * (hi - lo)).clamp(lo, hi)
        })
        .collect();
    let res_v: Vec<f64> = (0..n_res)
        .map(|_| {
            if rng.random::<f64>() < cfg.tight_fraction {
                uniform(&mut rng, cfg.tight_velocity)
            } else {
                uniform(&mut rng, cfg.sand_velocity)
            }
        })
        .collect();
    let seal_v = uniform(&mut rng, cfg.seal_velocity);

    let noise = Normal::new(0.0, cfg.cell_noise_velocity.max(0.0)).expect("finite std");
    let mut velocity = Array2::<f64>::zeros(grid.shape());
    for iz in 0..grid.nz {
        let z = grid.depth(iz);
        for ix in 0..grid.nx {
            let x = (ix as f64 + 0.5) * grid.dx;
            let base = if seal.contains(&iz) {
                seal_v
            } else if iz < seal.start {
                let layer = over_ifaces
                    .iter()
                    .filter(|f| f.at(x).min(seal_top_m) <= z)
                    .count();
                over_v[layer]
            } else {
                let layer = res_ifaces
                    .iter()
                    .filter(|f| f.at(x).max(seal_bot_m) <= z)
                    .count();
                res_v[layer]
            };
            let dv = if cfg.cell_noise_velocity > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            velocity[[iz, ix]] = (base + dv).clamp(V_MIN, V_MAX);
        }
    }

    let porosity = velocity.mapv(|v| cfg.rock.porosity(v).expect("velocity clamped in range"));
    let mut permeability = porosity.mapv(|phi| {
        porosity_to_permeability(phi, cfg.rock.grain_diameter).expect("porosity in (0, 0.4]")
    });

    let mut model = EarthModel {
        grid,
        velocity,
        porosity,
        permeability: permeability.clone(),
        seal_rows: seal.clone(),
        fracture_col: 0,
        well_col: 0,
        injection_rows: Vec::new(),
        seed,
    };
    let median_k = model.median_reservoir_permeability();
    let cap = cfg.seal_perm_ratio * median_k;
    for iz in seal.clone() {
        for ix in 0..grid.nx {
            let k = &mut permeability[[iz, ix]];
            *k = k.min(cap);
        }
    }
    model.permeability = permeability;

    // Perforations sit in the lower part of the reservoir.
    let res_rows = grid.nz - seal.end;
    let win_lo = seal.end + (0.4 * res_rows as f64) as usize;
    let win_hi = (seal.end + (0.85 * res_rows as f64).ceil() as usize).clamp(win_lo + 1, grid.nz);
    let col_lo = ((cfg.well_window[0] * grid.nx as f64) as usize).min(grid.nx - 1);
    let col_hi = ((cfg.well_window[1] * grid.nx as f64) as usize).clamp(col_lo + 1, grid.nx);
    let good_cols: Vec<usize> = (col_lo..col_hi)
        .filter(|&c| {
            (win_lo..win_hi).any(|r| model.permeability[[r, c]] >= median_k)
        })
        .collect();
    let well_col = if good_cols.is_empty() {
        // fall back to the most permeable column in the window
        (col_lo..col_hi)
            .max_by(|&a, &b| {
                let ka: f64 = (win_lo..win_hi).map(|r| model.permeability[[r, a]]).sum();
                let kb: f64 = (win_lo..win_hi).map(|r| model.permeability[[r, b]]).sum();
                ka.total_cmp(&kb)
            })
            .unwrap_or(col_lo)
    } else {
        good_cols[rng.random_range(0..good_cols.len())]
    };
    let mut injection_rows: Vec<usize> = (win_lo..win_hi)
        .filter(|&r| model.permeability[[r, well_col]] >= median_k)
        .collect();
    if injection_rows.is_empty() {
        let best = (win_lo..win_hi)
            .max_by(|&a, &b| {
                model.permeability[[a, well_col]].total_cmp(&model.permeability[[b, well_col]])
            })
            .unwrap_or(win_lo);
        // keep the well in a high-permeability cell
        let k = &mut model.permeability[[best, well_col]];
        *k = k.max(median_k);
        injection_rows.push(best);
    }

    let offset_cells = (uniform(&mut rng, cfg.fracture_offset_m) / grid.dx).round().max(1.0) as usize;
    let fracture_col = if rng.random::<bool>() {
        well_col.saturating_add(offset_cells)
    } else {
        well_col.saturating_sub(offset_cells)
    }
    .clamp(1, grid.nx - 2);

    model.well_col = well_col;
    model.injection_rows = injection_rows;
    model.fracture_col = fracture_col;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid64() -> Grid2D {
        Grid2D::with_default_extent(64, 64).unwrap()
    }

    #[test]
    fn porosity_law_values() {
        assert_relative_eq!(velocity_to_porosity(1500.0).unwrap(), 0.36);
        assert_relative_eq!(velocity_to_porosity(2500.0).unwrap(), 0.25, epsilon = 1e-12);
        assert_relative_eq!(velocity_to_porosity(5500.0).unwrap(), 0.02);
        assert!(velocity_to_porosity(1400.0).is_err());
        assert!(velocity_to_porosity(5600.0).is_err());
    }

    #[test]
    fn kozeny_carman_values() {
        // 1e-8 * 0.015625 / (180 * 0.5625)
        let k = porosity_to_permeability(0.25, 1e-4).unwrap();
        assert_relative_eq!(k, 1.543_209_876_5e-12, max_relative = 1e-9);
        assert!(porosity_to_permeability(1e-6, 1e-4).unwrap() < 1e-25);
        assert!(
            porosity_to_permeability(0.3, 1e-4).unwrap()
                > porosity_to_permeability(0.2, 1e-4).unwrap()
        );
        assert!(porosity_to_permeability(0.0, 1e-4).is_err());
        assert!(porosity_to_permeability(1.0, 1e-4).is_err());
        assert!(porosity_to_permeability(0.2, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = GeoConfig::default();
        let a = make_layered_model(7, grid64(), &cfg).unwrap();
        let b = make_layered_model(7, grid64(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = GeoConfig::default();
        let a = make_layered_model(7, grid64(), &cfg).unwrap();
        let b = make_layered_model(8, grid64(), &cfg).unwrap();
        let differing = a
            .velocity
            .iter()
            .zip(b.velocity.iter())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differing as f64 >= 0.01 * a.grid.cells() as f64);
    }

    #[test]
    fn seal_is_tight() {
        let cfg = GeoConfig::default();
        for seed in 0..5 {
            let m = make_layered_model(seed, grid64(), &cfg).unwrap();
            let med = m.median_reservoir_permeability();
            let min_seal = m
                .permeability
                .rows()
                .into_iter()
                .skip(m.seal_rows.start)
                .take(m.seal_rows.len())
                .flat_map(|r| r.to_vec())
                .fold(f64::INFINITY, f64::min);
            assert!(min_seal <= 0.01 * med);
        }
    }

    #[test]
    fn small_grid_rejected() {
        let g = Grid2D::with_default_extent(16, 16).unwrap();
        assert!(make_layered_model(1, g, &GeoConfig::default()).is_err());
        assert!(Grid2D::new(4, 64, 1.0, 1.0).is_err());
        let cfg = GeoConfig {
            n_layers: 2,
            ..GeoConfig::default()
        };
        assert!(make_layered_model(1, grid64(), &cfg).is_err());
    }

    #[test]
    fn composed_map_is_monotone() {
        let law = RockPhysics::default();
        let mut prev = f64::INFINITY;
        let mut v = 1500.0;
        while v <= 4500.0 {
            let k = law.permeability(v).unwrap();
            assert!(k <= prev);
            prev = k;
            v += 25.0;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn generated_models_satisfy_invariants(seed in any::<u64>()) {
            let m = make_layered_model(seed, grid64(), &GeoConfig::default()).unwrap();
            m.check_invariants().unwrap();
        }

        #[test]
        fn porosity_non_increasing(a in 1500.0f64..5500.0, b in 1500.0f64..5500.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(velocity_to_porosity(lo).unwrap() >= velocity_to_porosity(hi).unwrap());
        }

        #[test]
        fn permeability_increasing(a in 0.001f64..0.999, b in 0.001f64..0.999) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(porosity_to_permeability(lo, 1e-4).unwrap() < porosity_to_permeability(hi, 1e-4).unwrap());
        }
    }
}
