//! Maximum-likelihood training of the flow with Adam.
//!
//! The objective per sample is `|z|^2 / 2 - log |det J|`; the reported
//! per-dimension NLL adds the Gaussian normalizer `log(2 pi) / 2`.

use std::path::Path;

use ndarray::{Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnf::{self, Cache, FlowModel, Real};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Std of the Gaussian noise added to `x` before each training pass.
    pub noise_magnitude: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// `[train, validation, test]` counts; `None` picks proportional splits.
    pub split: Option<[usize; 3]>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            noise_magnitude: 0.005,
            patience: None,
            split: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.noise_magnitude >= 0.0) {
            return bad("noise_magnitude must be non-negative");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        if let Some(s) = self.split {
            if s.contains(&0) {
                return bad("split counts must be positive");
            }
        }
        Ok(())
    }
}

/// Paired saturation images and observations at training resolution.
#[derive(Debug, Clone, Default)]
pub struct Pairs<T> {
    pub x: Vec<Array3<T>>,
    pub y: Vec<Array3<T>>,
}

impl<T: Real> Pairs<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Pairs<T> {
        Pairs {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
        }
    }
}

pub fn nll_per_dim(loss: f64, dim: usize) -> f64 {
    loss / dim as f64 + 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn sample_loss<T: Real>(model: &FlowModel<T>, x: &ArrayView3<T>, y: &ArrayView3<T>) -> Result<T> {
    let code = model.forward(x, y)?;
    let half = T::c(0.5);
    Ok(code.z.iter().map(|&v| half * v * v).sum::<T>() - code.logdet)
}

/// Mean loss over a batch without gradients or noise.
pub fn eval_loss<T: Real>(model: &FlowModel<T>, xs: &[ArrayView3<T>], ys: &[ArrayView3<T>]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("evaluation needs a non-empty batch of matched pairs"));
    }
    let per: Vec<T> = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, y)| sample_loss(model, x, y))
        .collect::<Result<_>>()?;
    Ok(per.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>() / xs.len() as f64)
}

/// Mean loss over a whole set, evaluated in chunks.
pub fn dataset_loss<T: Real>(model: &FlowModel<T>, data: &Pairs<T>) -> Result<f64> {
    let mut total = 0.0;
    for (xc, yc) in data.x.chunks(64).zip(data.y.chunks(64)) {
        let xs: Vec<_> = xc.iter().map(|a| a.view()).collect();
        let ys: Vec<_> = yc.iter().map(|a| a.view()).collect();
        total += eval_loss(model, &xs, &ys)? * xc.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Batch loss `(1/B) sum(|z|^2/2 - logdet)` and its exact gradient with
/// respect to every parameter. Per-sample gradients are computed in
/// parallel and summed in sample order.
pub fn nll_loss<T: Real>(
    model: &FlowModel<T>,
    xs: &[ArrayView3<T>],
    ys: &[ArrayView3<T>],
) -> Result<(f64, Vec<T>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("loss needs a non-empty batch of matched pairs"));
    }
    let per: Vec<(T, Vec<T>)> = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, y)| sample_grad(model, x, y))
        .collect::<Result<_>>()?;
    let inv_b = T::c(1.0 / xs.len() as f64);
    let mut grad = vec![T::zero(); model.params().len()];
    let mut loss = 0.0;
    for (l, g) in per {
        loss += l.to_f64().unwrap_or(f64::NAN);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b * inv_b;
        }
    }
    Ok((loss / xs.len() as f64, grad))
}

fn sample_grad<T: Real>(model: &FlowModel<T>, x: &ArrayView3<T>, y: &ArrayView3<T>) -> Result<(T, Vec<T>)> {
    if x.dim() != model.x_shape || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training sample has the wrong shape or non-finite values"));
    }
    let cond = model.cond_pyramid(y)?;
    let cond: Vec<&[T]> = cond.iter().map(|a| a.as_slice().expect("standard layout")).collect();
    let mut tape: Vec<Cache<T>> = Vec::new();
    let (z, logdet) = model.run(x.iter().copied().collect(), &cond, Some(&mut tape));
    let half = T::c(0.5);
    let loss = z.iter().map(|&v| half * v * v).sum::<T>() - logdet;
    let mut grad = vec![T::zero(); model.params().len()];
    model.backward(&tape, &z, -T::one(), &mut grad);
    Ok((loss, grad))
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step<T: Real>(theta: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::invalid("adam state, gradient and parameters differ in length"));
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::c(1.0 / (1.0 - b1.powi(state.t as i32)));
    let c2 = T::c(1.0 / (1.0 - b2.powi(state.t as i32)));
    let (b1, b2, lr, eps) = (T::c(b1), T::c(b2), T::c(cfg.learning_rate), T::c(cfg.epsilon));
    let one = T::one();
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let mh = state.m[i] * c1;
        let vh = state.v[i] * c2;
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch; absent for the pre-training row.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation loss.
    pub model: FlowModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains `model` on `train_set`, validating on `val_set` after every
/// epoch. Row 0 of the history is the validation loss before training. If
/// `checkpoint` is given, the best model is written there on improvement.
pub fn train<T: Real>(
    mut model: FlowModel<T>,
    train_set: &Pairs<T>,
    val_set: &Pairs<T>,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "training set of {} pairs is smaller than one batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let n = train_set.len();
    let order_for = |epoch: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(rng::mix(cfg.seed, epoch as u64), rng::SHUFFLE));
        idx
    };
    if !model.is_initialized() {
        let first = &order_for(1)[..cfg.batch_size.max(8).min(n)];
        let xs: Vec<_> = first.iter().map(|&i| train_set.x[i].view()).collect();
        let ys: Vec<_> = first.iter().map(|&i| train_set.y[i].view()).collect();
        model.actnorm_init(&xs, &ys)?;
    }
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: dataset_loss(&model, val_set)?,
    }];
    let mut best = (history[0].val_loss, 0usize, model.clone());
    let mut state = AdamState::new(model.params().len());
    let noise_std = cfg.noise_magnitude;
    for epoch in 1..=cfg.epochs {
        let order = order_for(epoch);
        let mut noise_rng = rng::stream(rng::mix(cfg.seed, epoch as u64), rng::DEQUANT);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let noisy: Vec<Array3<T>> = chunk
                .iter()
                .map(|&i| {
                    train_set.x[i].mapv(|v| {
                        let e: f64 = StandardNormal.sample(&mut noise_rng);
                        v + T::c(noise_std * e)
                    })
                })
                .collect();
            let xs: Vec<_> = noisy.iter().map(|a| a.view()).collect();
            let ys: Vec<_> = chunk.iter().map(|&i| train_set.y[i].view()).collect();
            let (loss, grad) = nll_loss(&model, &xs, &ys)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(model.params_mut(), &grad, &mut state, cfg)?;
            sum += loss;
            batches += 1;
        }
        let val_loss = dataset_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: Some(sum / batches as f64),
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            if let Some(path) = checkpoint {
                cnf::save(&model, path)?;
            }
        } else if cfg.patience.is_some_and(|p| epoch - best.1 >= p) {
            break;
        }
    }
    if best.1 == 0 {
        if let Some(path) = checkpoint {
            cnf::save(&best.2, path)?;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.map(|v| format!("{v:.9e}")).unwrap_or_default(),
            format!("{:.9e}", r.val_loss),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
