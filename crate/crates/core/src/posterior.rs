//! Posterior sampling, ensemble statistics, image metrics and the leak
//! decision.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnf::{FlowModel, Real};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub samples: usize,
    /// Leak threshold on the above-seal mass fraction, before calibration.
    pub tau: f64,
    /// Re-calibrate `tau` on the validation split.
    pub calibrate_tau: bool,
    pub seed: u64,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig {
            samples: 64,
            tau: 0.01,
            calibrate_tau: true,
            seed: 0,
        }
    }
}

impl PosteriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!("posterior samples must be at least 2, got {}", self.samples)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub samples: Vec<Array2<f64>>,
    pub mean: Array2<f64>,
    /// Pointwise population standard deviation (divides by `M`).
    pub std: Array2<f64>,
    pub normalized_std: Array2<f64>,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean and std accumulated in sample order.
    pub fn from_samples(samples: Vec<Array2<f64>>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
        let dim = first.dim();
        if samples.iter().any(|a| a.dim() != dim) {
            return Err(Error::invalid("ensemble members differ in shape"));
        }
        let m = samples.len() as f64;
        // shifted by the first member so identical members give exact zeros
        let mut shift = Array2::<f64>::zeros(dim);
        for a in &samples[1..] {
            shift += &(a - first);
        }
        let mean = first + &(shift / m);
        let mut var = Array2::<f64>::zeros(dim);
        for a in &samples {
            var.zip_mut_with(&(a - &mean), |v, d| *v += d * d);
        }
        let std = (var / m).mapv(f64::sqrt);
        let normalized_std = normalized_std(&mean, &std);
        Ok(PosteriorEnsemble {
            samples,
            mean,
            std,
            normalized_std,
        })
    }
}

/// Draws `m` seeded standard-normal latents and maps each through the
/// inverse flow conditioned on `y`. Samples are clamped to [0, 1].
pub fn sample_posterior<T: Real>(y: &ArrayView3<T>, model: &FlowModel<T>, m: usize, seed: u64) -> Result<PosteriorEnsemble> {
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 posterior samples, got {m}")));
    }
    let latents: Vec<Array1<T>> = (0..m)
        .map(|i| {
            let mut r = rng::stream(rng::mix(seed, i as u64), rng::LATENT);
            Array1::from_shape_fn(model.dim(), |_| {
                let v: f64 = StandardNormal.sample(&mut r);
                T::c(v)
            })
        })
        .collect();
    sample_with_latents(y, model, &latents)
}

/// Inverse-maps the given latents. `sample_posterior` with its random draws
/// replaced, used to probe degenerate ensembles.
pub fn sample_with_latents<T: Real>(y: &ArrayView3<T>, model: &FlowModel<T>, latents: &[Array1<T>]) -> Result<PosteriorEnsemble> {
    if !model.is_initialized() {
        return Err(Error::Uninitialized("posterior sampling needs a trained flow".into()));
    }
    let xs: Vec<Array3<T>> = latents
        .par_iter()
        .map(|z| model.inverse(z, y))
        .collect::<Result<_>>()?;
    let samples = xs
        .into_iter()
        .map(|x| {
            let (_, h, w) = x.dim();
            let x0 = x.slice(s![0, .., ..]).mapv(|v| v.to_f64().unwrap_or(f64::NAN).clamp(0.0, 1.0));
            debug_assert_eq!(x0.dim(), (h, w));
            x0
        })
        .collect();
    PosteriorEnsemble::from_samples(samples)
}

/// Normalized Gaussian kernel truncated at three standard deviations.
fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable smoothing; the kernel is renormalized over cells inside the
/// image so flat fields stay flat up to the border.
fn smooth(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(sigma, radius);
    let (nr, nc) = a.dim();
    let pass = |src: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((nr, nc), |(i, j)| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (t, &kv) in k.iter().enumerate() {
                let off = t as isize - radius as isize;
                let (ii, jj) = if along_rows { (i as isize + off, j as isize) } else { (i as isize, j as isize + off) };
                if ii >= 0 && jj >= 0 && (ii as usize) < nr && (jj as usize) < nc {
                    acc += kv * src[[ii as usize, jj as usize]];
                    wsum += kv;
                }
            }
            acc / wsum
        })
    };
    pass(&pass(a, true), false)
}

pub const ENVELOPE_SIGMA: f64 = 2.0;
pub const ENVELOPE_EPS_FRACTION: f64 = 0.05;
/// Keeps the all-zero-mean path finite.
pub const ENVELOPE_EPS_MIN: f64 = 1e-6;

/// `std / (envelope(mean) + eps)` with `envelope` the Gaussian-smoothed
/// `|mean|` and `eps = 0.05 max(envelope)`.
pub fn normalized_std(mean: &Array2<f64>, std: &Array2<f64>) -> Array2<f64> {
    let env = smooth(&mean.mapv(f64::abs), ENVELOPE_SIGMA);
    let peak = env.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = (ENVELOPE_EPS_FRACTION * peak).max(ENVELOPE_EPS_MIN);
    let mut out = std.clone();
    out.zip_mut_with(&env, |s, &e| *s /= e + eps);
    out
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), unit
/// dynamic range, averaged over all windows inside the image.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("ssim shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (nr, nc) = a.dim();
    if nr < SSIM_WINDOW || nc < SSIM_WINDOW {
        return Err(Error::invalid(format!("image {nr}x{nc} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (or, oc) = (nr - SSIM_WINDOW + 1, nc - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..or {
        for j in 0..oc {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (u, &ku) in k.iter().enumerate() {
                for (v, &kv) in k.iter().enumerate() {
                    let w = ku * kv;
                    let (x, y) = (a[[i + u, j + v]], b[[i + u, j + v]]);
                    ma += w * x;
                    mb += w * y;
                    saa += w * x * x;
                    sbb += w * y * y;
                    sab += w * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (or * oc) as f64)
}

pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("rmse shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok((a - b).mapv(|d| d * d).mean().unwrap_or(0.0).sqrt())
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Fraction of saturation mass in rows `0..seal.start`.
pub fn leak_score(mean: &Array2<f64>, seal: &Range<usize>) -> f64 {
    let total: f64 = mean.sum();
    if total <= 0.0 {
        return 0.0;
    }
    let above: f64 = mean.slice(s![..seal.start.min(mean.nrows()), ..]).sum();
    (above / total).clamp(0.0, 1.0)
}

/// `(score > tau, score)`.
pub fn classify_leak(mean: &Array2<f64>, seal: &Range<usize>, tau: f64) -> (bool, f64) {
    let score = leak_score(mean, seal);
    (score > tau, score)
}

/// Threshold halfway across the gap between the highest no-leak score and
/// the lowest leak score. When the classes overlap, the midpoint between
/// neighboring sorted scores with the fewest errors is used instead.
pub fn calibrate_tau(leak: &[f64], no_leak: &[f64]) -> Option<f64> {
    if leak.is_empty() || no_leak.is_empty() {
        return None;
    }
    let hi_neg = no_leak.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo_pos = leak.iter().copied().fold(f64::INFINITY, f64::min);
    if hi_neg < lo_pos {
        return Some(0.5 * (hi_neg + lo_pos));
    }
    let mut all: Vec<f64> = leak.iter().chain(no_leak).copied().collect();
    all.sort_by(f64::total_cmp);
    let errors = |t: f64| leak.iter().filter(|&&v| v <= t).count() + no_leak.iter().filter(|&&v| v > t).count();
    all.windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .min_by_key(|&t| errors(t))
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_id: usize,
    pub truth_leak: bool,
    pub ssim: f64,
    pub rmse: f64,
    pub leak_decision: bool,
    pub leak_score: f64,
    pub uncertainty_error_corr: f64,
}

pub fn evaluate(
    sample_id: usize,
    ens: &PosteriorEnsemble,
    truth: &Array2<f64>,
    truth_leak: bool,
    seal: &Range<usize>,
    tau: f64,
) -> Result<EvalReport> {
    let (leak_decision, leak_score) = classify_leak(&ens.mean, seal, tau);
    let err = (&ens.mean - truth).mapv(f64::abs);
    Ok(EvalReport {
        sample_id,
        truth_leak,
        ssim: ssim(&ens.mean, truth)?,
        rmse: rmse(&ens.mean, truth)?,
        leak_decision,
        leak_score,
        uncertainty_error_corr: pearson(&ens.std, &err),
    })
}

pub fn write_reports(path: &Path, rows: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests;
