//! PNG panels and summary table.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::run::{read_planes, InferIndex, RunPaths};
use crate::error::{Error, Result};
use crate::posterior::{read_reports, EvalReport};

const SCALE: u32 = 4;
const GAP: u32 = 4;

/// Viridis sampled at five points.
const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (VIRIDIS[i][k] * (1.0 - f) + VIRIDIS[i + 1][k] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Side-by-side heatmaps, each with its own `[lo, hi]` color range.
pub fn panel_image(panels: &[(&Array2<f64>, f64, f64)]) -> RgbImage {
    let (h, w) = panels.first().map(|p| p.0.dim()).unwrap_or((0, 0));
    let (ph, pw) = (h as u32 * SCALE, w as u32 * SCALE);
    let n = panels.len() as u32;
    let mut img = RgbImage::from_pixel(n * pw + (n.saturating_sub(1)) * GAP, ph, Rgb([255, 255, 255]));
    for (k, (a, lo, hi)) in panels.iter().enumerate() {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x0 = k as u32 * (pw + GAP);
        for ((i, j), &v) in a.indexed_iter() {
            let c = color((v - lo) / span);
            for di in 0..SCALE {
                for dj in 0..SCALE {
                    img.put_pixel(x0 + j as u32 * SCALE + dj, i as u32 * SCALE + di, c);
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub mean_ssim: f64,
    pub mean_rmse: f64,
    pub mean_uncertainty_error_corr: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub tau: f64,
}

pub fn summarize(rows: &[EvalReport], tau: f64) -> Summary {
    let n = rows.len().max(1) as f64;
    Summary {
        samples: rows.len(),
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mean_rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
        mean_uncertainty_error_corr: rows.iter().map(|r| r.uncertainty_error_corr).sum::<f64>() / n,
        false_positives: rows.iter().filter(|r| r.leak_decision && !r.truth_leak).count(),
        false_negatives: rows.iter().filter(|r| !r.leak_decision && r.truth_leak).count(),
        tau,
    }
}

/// Writes a four-panel PNG (truth, posterior mean, absolute error,
/// normalized std) per evaluated sample and `summary.csv`. Returns the PNG
/// paths.
pub fn report_run(paths: &RunPaths) -> Result<(Vec<PathBuf>, Summary)> {
    let ds = Dataset::open(&paths.dataset())?;
    let rows = read_reports(&paths.eval_csv())?;
    let ip = paths.infer().join("index.json");
    let index: InferIndex = serde_json::from_slice(&fs::read(&ip).map_err(|e| Error::io(&ip, e))?)
        .map_err(|e| Error::format(&ip, e.to_string()))?;
    let out = paths.report();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let shape = (index.resolution[0], index.resolution[1]);
    let mut pngs = Vec::new();
    for r in &rows {
        let (x, _) = ds.read_pair(r.sample_id)?;
        let truth = x.index_axis(ndarray::Axis(0), 0).mapv(f64::from);
        let [mean, _, nstd] = read_planes(paths, r.sample_id, shape)?;
        let err = (&mean - &truth).mapv(f64::abs);
        let max = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, &v| m.max(v));
        let img = panel_image(&[(&truth, 0.0, 1.0), (&mean, 0.0, 1.0), (&err, 0.0, max(&err)), (&nstd, 0.0, max(&nstd))]);
        let p = out.join(format!("sample_{:06}.png", r.sample_id));
        img.save(&p)?;
        pngs.push(p);
    }
    let summary = summarize(&rows, index.tau);
    write_summary(&out.join("summary.csv"), &summary)?;
    Ok((pngs, summary))
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(s)?;
    w.flush().map_err(|e| Error::io(path, e))
}
