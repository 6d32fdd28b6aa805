//! Observation operator: a per-trace convolutional proxy for time-lapse
//! seismic imaging, plus saturation and pressure logs at the injector.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomodel::EarthModel;
use crate::resim::{hydrostatic_pressure, FluidProps, SimResult};
use crate::rng;

/// Ricker wavelet `(1 − 2π²f²t²) exp(−π²f²t²)`.
pub fn ricker(t: f64, f: f64) -> f64 {
    let a = (PI * f * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Gardner-style density from P velocity, kg/m³.
pub fn gardner_density(v: f64) -> f64 {
    310.0 * v.powf(0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub peak_frequency: f64,
    /// Stretch the wavelet by the local velocity at each reflector. When
    /// off, one velocity (the model mean) is used everywhere.
    pub background_velocity_use: bool,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            peak_frequency: 15.0,
            background_velocity_use: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub wavelet: WaveletConfig,
    /// Velocity drop at full CO2 saturation, m/s.
    pub beta: f64,
    /// `inf` disables noise.
    pub snr_db: f64,
    /// Scale applied to the seismic image so it is O(1).
    pub seismic_gain: f64,
    /// y3 = overpressure / (factor × p_threshold).
    pub pressure_scale_factor: f64,
    /// RMS of the noise used when the time-lapse signal is exactly zero.
    pub zero_signal_noise_rms: f64,
    /// Optional second well column logged into y2 and y3.
    pub monitor_well_col: Option<usize>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            wavelet: WaveletConfig::default(),
            beta: 300.0,
            snr_db: 8.0,
            seismic_gain: 10.0,
            pressure_scale_factor: 1.5,
            zero_signal_noise_rms: 0.05,
            monitor_well_col: None,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelet.peak_frequency > 0.0 && self.wavelet.peak_frequency.is_finite()) {
            return Err(Error::invalid("peak_frequency must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("snr_db must be a number or inf"));
        }
        if !(self.seismic_gain > 0.0 && self.seismic_gain.is_finite()) {
            return Err(Error::invalid("seismic_gain must be positive"));
        }
        if !(self.pressure_scale_factor > 0.0 && self.pressure_scale_factor.is_finite()) {
            return Err(Error::invalid("pressure_scale_factor must be positive"));
        }
        if !(self.zero_signal_noise_rms >= 0.0 && self.zero_signal_noise_rms.is_finite()) {
            return Err(Error::invalid("zero_signal_noise_rms must be non-negative"));
        }
        Ok(())
    }
}

/// Three conditioning channels, all on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTriple {
    pub y1_seismic: Array2<f64>,
    pub y2_well_sat: Array2<f64>,
    pub y3_well_pres: Array2<f64>,
    /// SNR measured against the clean image at simulation resolution; `inf`
    /// without noise, `-inf` for pure noise.
    pub snr_db: f64,
}

impl ObservationTriple {
    pub const CHANNELS: [&'static str; 3] = ["seismic", "well_saturation", "well_pressure"];

    pub fn channels(&self) -> [&Array2<f64>; 3] {
        [&self.y1_seismic, &self.y2_well_sat, &self.y3_well_pres]
    }
}

fn check_shape(model: &EarthModel, f: &Array2<f64>, what: &str) -> Result<()> {
    if f.dim() != model.grid.shape() {
        return Err(Error::invalid(format!(
            "{what} has shape {:?}, grid is {:?}",
            f.dim(),
            model.grid.shape()
        )));
    }
    Ok(())
}

/// Δv = −β s.
pub fn saturation_to_dvel(s: &Array2<f64>, model: &EarthModel, beta: f64) -> Result<Array2<f64>> {
    check_shape(model, s, "saturation")?;
    Ok(s.mapv(|v| -beta * v))
}

/// Depth-sampled wavelet operator for one model: entry (i, j) is the
/// response at row i of a unit reflector at row j.
struct DepthWavelet {
    nz: usize,
    /// Per column, a dense nz × nz matrix stored row-major.
    columns: Vec<Vec<f64>>,
}

impl DepthWavelet {
    fn new(model: &EarthModel, cfg: &WaveletConfig) -> Self {
        let (nz, nx) = model.grid.shape();
        let dz = model.grid.dz;
        let f = cfg.peak_frequency;
        let mean_v = model.velocity.mean().unwrap_or(1.0);
        let columns = (0..nx)
            .map(|ix| {
                let mut m = vec![0.0; nz * nz];
                for j in 0..nz {
                    let v = if cfg.background_velocity_use {
                        model.velocity[[j, ix]]
                    } else {
                        mean_v
                    };
                    for i in 0..nz {
                        let t = (i as f64 - j as f64) * dz / v;
                        m[i * nz + j] = ricker(t, f);
                    }
                }
                m
            })
            .collect();
        Self { nz, columns }
    }

    /// Convolve every column of `r` with its wavelet.
    fn apply(&self, r: &Array2<f64>) -> Array2<f64> {
        let nz = self.nz;
        let nx = self.columns.len();
        let mut out = Array2::zeros((nz, nx));
        for (ix, m) in self.columns.iter().enumerate() {
            for j in 0..nz {
                let rj = r[[j, ix]];
                if rj == 0.0 {
                    continue;
                }
                for i in 0..nz {
                    out[[i, ix]] += m[i * nz + j] * rj;
                }
            }
        }
        out
    }
}

fn log_impedance(v: f64) -> f64 {
    (gardner_density(v) * v).ln()
}

/// Reflectivity change between monitor and baseline, placed on the lower
/// cell of each interface.
fn reflectivity_change(
    model: &EarthModel,
    s_monitor: &Array2<f64>,
    s_baseline: &Array2<f64>,
    beta: f64,
) -> Array2<f64> {
    let (nz, nx) = model.grid.shape();
    let ln_z = |s: &Array2<f64>, iz: usize, ix: usize| log_impedance(model.velocity[[iz, ix]] - beta * s[[iz, ix]]);
    let mut dr = Array2::zeros((nz, nx));
    for ix in 0..nx {
        for iz in 1..nz {
            let unchanged = s_monitor[[iz, ix]] == s_baseline[[iz, ix]]
                && s_monitor[[iz - 1, ix]] == s_baseline[[iz - 1, ix]];
            if unchanged {
                continue;
            }
            let rm = 0.5 * (ln_z(s_monitor, iz, ix) - ln_z(s_monitor, iz - 1, ix));
            let rb = 0.5 * (ln_z(s_baseline, iz, ix) - ln_z(s_baseline, iz - 1, ix));
            dr[[iz, ix]] = rm - rb;
        }
    }
    dr
}

/// Monitor image minus baseline image (before gain and noise).
pub fn image_timelapse(
    model: &EarthModel,
    s_monitor: &Array2<f64>,
    s_baseline: &Array2<f64>,
    beta: f64,
    cfg: &WaveletConfig,
) -> Result<Array2<f64>> {
    check_shape(model, s_monitor, "monitor saturation")?;
    check_shape(model, s_baseline, "baseline saturation")?;
    for (iz, ix) in ndarray::indices(model.grid.shape()) {
        let v = model.velocity[[iz, ix]];
        if v - beta * s_monitor[[iz, ix]].max(s_baseline[[iz, ix]]) <= 0.0 {
            return Err(Error::invalid("velocity perturbation drives velocity non-positive"));
        }
    }
    let dr = reflectivity_change(model, s_monitor, s_baseline, beta);
    Ok(DepthWavelet::new(model, cfg).apply(&dr))
}

fn energy(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// `10 log10(‖signal‖² / ‖noise‖²)`.
pub fn measured_snr_db(signal: &Array2<f64>, noisy: &Array2<f64>) -> f64 {
    let noise = noisy - signal;
    10.0 * (energy(signal) / energy(&noise)).log10()
}

/// Band-limited noise realization with unit RMS.
fn unit_noise(model: &EarthModel, cfg: &WaveletConfig, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, rng::NOISE);
    let white = Array2::from_shape_simple_fn(model.grid.shape(), || StandardNormal.sample(&mut rng));
    let n = DepthWavelet::new(model, cfg).apply(&white);
    let rms = (energy(&n) / n.len() as f64).sqrt();
    n / rms
}

/// Add Ricker-filtered noise scaled so the SNR is exactly `snr_db`.
pub fn add_bandlimited_noise(
    y1: &Array2<f64>,
    model: &EarthModel,
    cfg: &WaveletConfig,
    snr_db: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    check_shape(model, y1, "image")?;
    if snr_db == f64::INFINITY {
        return Ok(y1.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    let e_sig = energy(y1);
    if !(e_sig > 0.0) {
        return Err(Error::invalid("zero signal: SNR is undefined"));
    }
    let noise = unit_noise(model, cfg, seed);
    let scale = (e_sig / (energy(&noise) * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(y1 + &(noise * scale))
}

/// Area average over `factor`-sized blocks.
pub fn downsample(field: &Array2<f64>, shape: (usize, usize)) -> Result<Array2<f64>> {
    let (nz, nx) = field.dim();
    let (tz, tx) = shape;
    if tz == 0 || tx == 0 || nz % tz != 0 || nx % tx != 0 {
        return Err(Error::invalid(format!(
            "cannot area-average {nz}x{nx} to {tz}x{tx}"
        )));
    }
    let (fz, fx) = (nz / tz, nx / tx);
    if fz == 1 && fx == 1 {
        return Ok(field.clone());
    }
    let w = 1.0 / (fz * fx) as f64;
    Ok(Array2::from_shape_fn(shape, |(iz, ix)| {
        field
            .slice(ndarray::s![iz * fz..(iz + 1) * fz, ix * fx..(ix + 1) * fx])
            .sum()
            * w
    }))
}

/// Build y from the final snapshot of `sim`, at the `training` resolution.
pub fn assemble_observation(
    sim: &SimResult,
    model: &EarthModel,
    props: &FluidProps,
    p_threshold: f64,
    cfg: &ObservationConfig,
    training: (usize, usize),
    seed: u64,
) -> Result<ObservationTriple> {
    cfg.validate()?;
    let s = sim
        .saturation
        .last()
        .ok_or_else(|| Error::invalid("simulation has no snapshots"))?;
    let p = sim.pressure.last().ok_or_else(|| Error::invalid("simulation has no snapshots"))?;
    check_shape(model, s, "saturation")?;
    check_shape(model, p, "pressure")?;
    if !(p_threshold > 0.0) {
        return Err(Error::invalid("pressure normalization needs p_threshold > 0"));
    }

    let baseline = Array2::zeros(s.dim());
    let clean = image_timelapse(model, s, &baseline, cfg.beta, &cfg.wavelet)? * cfg.seismic_gain;
    let (y1, snr_db) = if cfg.snr_db == f64::INFINITY {
        (clean, f64::INFINITY)
    } else if energy(&clean) > 0.0 {
        let y = add_bandlimited_noise(&clean, model, &cfg.wavelet, cfg.snr_db, seed)?;
        let measured = measured_snr_db(&clean, &y);
        (y, measured)
    } else {
        let noise = unit_noise(model, &cfg.wavelet, seed) * cfg.zero_signal_noise_rms;
        (noise, f64::NEG_INFINITY)
    };

    let mut wells = vec![model.well_col];
    if let Some(c) = cfg.monitor_well_col {
        if c >= model.grid.nx {
            return Err(Error::invalid(format!("monitor well column {c} outside the grid")));
        }
        wells.push(c);
    }
    let hydro = hydrostatic_pressure(&model.grid, props);
    let scale = cfg.pressure_scale_factor * p_threshold;
    let mut y2 = Array2::zeros(s.dim());
    let mut y3 = Array2::zeros(s.dim());
    for &c in &wells {
        for iz in 0..model.grid.nz {
            y2[[iz, c]] = s[[iz, c]].clamp(0.0, 1.0);
            y3[[iz, c]] = ((p[[iz, c]] - hydro[[iz, c]]) / scale).clamp(0.0, 1.0);
        }
    }

    Ok(ObservationTriple {
        y1_seismic: downsample(&y1, training)?,
        y2_well_sat: downsample(&y2, training)?,
        y3_well_pres: downsample(&y3, training)?,
        snr_db,
    })
}
