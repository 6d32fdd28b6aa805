//! Train and infer stages over a run directory.
//!
//! ```text
//! <out>/dataset/        manifest.json + records/
//! <out>/model.ckpt      best-validation flow
//! <out>/loss.csv        per-epoch losses
//! <out>/run.json        configs used by train and infer
//! <out>/infer/          eval.csv, index.json, per-sample planes
//! <out>/report/         PNG panels and summary.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{default_split, split_dataset, Dataset, SplitAssignment};
use crate::cnf::{self, FlowModel};
use crate::error::{Error, Result};
use crate::posterior::{calibrate_tau, evaluate, sample_posterior, write_reports, EvalReport, PosteriorEnsemble};
use crate::rng;
use crate::train::{self, TrainOutcome};

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn run_json(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn infer(&self) -> PathBuf {
        self.root.join("infer")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.infer().join("eval.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Assigns splits once; an existing assignment with the same counts and
/// seed is kept.
pub fn ensure_split(ds: &mut Dataset, cfg: &RunConfig) -> Result<SplitAssignment> {
    let ok = ds.manifest.records.iter().filter(|r| r.is_ok()).count();
    let counts = cfg.training.split.unwrap_or_else(|| default_split(ok));
    let seed = cfg.training.seed;
    if let Some(s) = &ds.manifest.split {
        if s.seed == seed && [s.train.len(), s.val.len(), s.test.len()] == counts {
            return Ok(s.clone());
        }
    }
    let split = split_dataset(&ds.manifest, counts, seed)?;
    ds.manifest.split = Some(split.clone());
    ds.save_manifest()?;
    Ok(split)
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    dataset_config_hash: String,
    config: RunConfig,
    best_epoch: Option<usize>,
    tau: Option<f64>,
}

fn update_run_json(paths: &RunPaths, f: impl FnOnce(&mut RunRecord)) -> Result<()> {
    let p = paths.run_json();
    let mut rec: RunRecord = match fs::read(&p) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| Error::format(&p, e.to_string()))?,
        Err(_) => RunRecord {
            dataset_config_hash: String::new(),
            config: RunConfig::default(),
            best_epoch: None,
            tau: None,
        },
    };
    f(&mut rec);
    fs::write(&p, serde_json::to_vec_pretty(&rec)?).map_err(|e| Error::io(&p, e))
}

pub fn train_run(cfg: &RunConfig, paths: &RunPaths) -> Result<TrainOutcome<f32>> {
    let mut ds = Dataset::open(&paths.dataset())?;
    let split = ensure_split(&mut ds, cfg)?;
    let train_set = ds.pairs(&split.train)?;
    let val_set = ds.pairs(&split.val)?;
    let [h, w] = ds.manifest.resolution;
    let model = FlowModel::<f32>::new(cfg.model.clone(), (1, h, w), 3)?;
    mkdir(&paths.root)?;
    let out = train::train(model, &train_set, &val_set, &cfg.training, Some(&paths.checkpoint()))?;
    train::write_history(&paths.loss_csv(), &out.history)?;
    update_run_json(paths, |r| {
        r.dataset_config_hash = ds.manifest.config_hash.clone();
        r.config = cfg.clone();
        r.best_epoch = Some(out.best_epoch);
    })?;
    Ok(out)
}

fn ensemble_for(ds: &Dataset, model: &FlowModel<f32>, id: usize, cfg: &RunConfig) -> Result<PosteriorEnsemble> {
    let (_, y) = ds.read_pair(id)?;
    sample_posterior(&y.view(), model, cfg.posterior.samples, rng::mix(cfg.posterior.seed, id as u64))
}

/// Leak threshold: the configured `tau`, or the gap midpoint of posterior
/// mean scores on the validation split.
pub fn tau_for(ds: &Dataset, model: &FlowModel<f32>, cfg: &RunConfig, split: &SplitAssignment) -> Result<f64> {
    if !cfg.posterior.calibrate_tau {
        return Ok(cfg.posterior.tau);
    }
    let scored: Vec<(bool, f64)> = split
        .val
        .par_iter()
        .map(|&id| {
            let ens = ensemble_for(ds, model, id, cfg)?;
            let seal = ds.manifest.seal_rows_stored(id);
            Ok((ds.manifest.records[id].leak, crate::posterior::leak_score(&ens.mean, &seal)))
        })
        .collect::<Result<_>>()?;
    let pos: Vec<f64> = scored.iter().filter(|s| s.0).map(|s| s.1).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.0).map(|s| s.1).collect();
    Ok(calibrate_tau(&pos, &neg).unwrap_or(cfg.posterior.tau))
}

fn write_planes(path: &Path, planes: &[&Array2<f64>]) -> Result<()> {
    let mut bytes = Vec::new();
    for p in planes {
        for &v in p.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads the `[mean, std, normalized_std]` planes written by [`infer_run`].
pub fn read_planes(paths: &RunPaths, id: usize, shape: (usize, usize)) -> Result<[Array2<f64>; 3]> {
    let path = paths.infer().join(format!("{id:06}.f32"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let n = shape.0 * shape.1;
    if bytes.len() != 12 * n {
        return Err(Error::format(&path, format!("expected {} bytes, found {}", 12 * n, bytes.len())));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let plane = |k: usize| Array2::from_shape_vec(shape, vals[k * n..(k + 1) * n].to_vec()).expect("shape");
    Ok([plane(0), plane(1), plane(2)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferIndex {
    pub resolution: [usize; 2],
    pub planes: Vec<String>,
    pub tau: f64,
    pub ids: Vec<usize>,
}

/// Samples the posterior for `ids` (the test split when `None`), writes
/// their planes and the evaluation table.
pub fn infer_run(cfg: &RunConfig, paths: &RunPaths, ids: Option<&[usize]>) -> Result<(Vec<EvalReport>, f64)> {
    cfg.posterior.validate()?;
    let mut ds = Dataset::open(&paths.dataset())?;
    let split = ensure_split(&mut ds, cfg)?;
    let model = cnf::load::<f32>(&paths.checkpoint())?;
    let ids: Vec<usize> = match ids {
        Some(v) => {
            for &id in v {
                ds.record(id)?;
            }
            v.to_vec()
        }
        None => split.test.clone(),
    };
    let tau = tau_for(&ds, &model, cfg, &split)?;
    mkdir(&paths.infer())?;
    let rows: Vec<EvalReport> = ids
        .par_iter()
        .map(|&id| {
            let ens = ensemble_for(&ds, &model, id, cfg)?;
            let (x, _) = ds.read_pair(id)?;
            let truth = x.index_axis(ndarray::Axis(0), 0).mapv(f64::from);
            let seal = ds.manifest.seal_rows_stored(id);
            let row = evaluate(id, &ens, &truth, ds.manifest.records[id].leak, &seal, tau)?;
            write_planes(
                &paths.infer().join(format!("{id:06}.f32")),
                &[&ens.mean, &ens.std, &ens.normalized_std],
            )?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    write_reports(&paths.eval_csv(), &rows)?;
    let index = InferIndex {
        resolution: ds.manifest.resolution,
        planes: vec!["mean".into(), "std".into(), "normalized_std".into()],
        tau,
        ids: ids.clone(),
    };
    let ip = paths.infer().join("index.json");
    fs::write(&ip, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&ip, e))?;
    update_run_json(paths, |r| r.tau = Some(tau))?;
    Ok((rows, tau))
}
