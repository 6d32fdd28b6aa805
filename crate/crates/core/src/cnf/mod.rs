//! Conditional normalizing flow `f(x; y)`.
//!
//! Multi-scale layout: each level squeezes (2x2 space to channel), runs `K`
//! steps of actnorm, a fixed channel permutation and a conditional affine
//! coupling, then factors half the channels out to the latent. The
//! observation is squeezed in lockstep so every coupling sees conditioning
//! at its own resolution.

mod checkpoint;
mod layers;
mod real;

use ndarray::{Array1, Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load, load_from, save, save_to};
pub use real::Real;

use layers::{squeeze, unsqueeze, Coupling, CouplingCache};

/// Order of the observation channels fed to the conditioner.
pub const CHANNEL_ORDER: [&str; 3] = crate::obs::ObservationTriple::CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub steps_per_level: usize,
    pub hidden_channels: usize,
    pub clamp: f64,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 3,
            steps_per_level: 4,
            hidden_channels: 32,
            clamp: 2.0,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.steps_per_level == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("levels, steps_per_level and hidden_channels must be positive".into()));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::Config(format!("clamp must be positive, got {}", self.clamp)));
        }
        Ok(())
    }
}

/// Latent code and accumulated `log |det J|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub z: Array1<T>,
    pub logdet: T,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Squeeze { c: usize, h: usize, w: usize },
    ActNorm { c: usize, hw: usize, logs: usize, bias: usize },
    Permute { c: usize, hw: usize, perm: Vec<usize> },
    Coupling(Coupling),
    /// Keep the first `keep` values, send the other half to `z[offset..]`.
    Split { keep: usize, offset: usize },
}

/// A named slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel<T> {
    pub config: FlowConfig,
    /// `(channels, height, width)` of `x` and of `y`.
    pub x_shape: (usize, usize, usize),
    pub y_channels: usize,
    pub(crate) ops: Vec<Op>,
    pub(crate) params: Vec<T>,
    pub(crate) table: Vec<ParamInfo>,
    /// Where the last level's values start in `z`.
    pub(crate) tail: usize,
    pub(crate) initialized: bool,
    /// `(actnorm op index, channel)` pairs whose init hit the variance floor.
    pub floored: Vec<(usize, usize)>,
}

/// Per-op state kept by a taped forward pass.
pub(crate) enum Cache<T> {
    None,
    Input(Vec<T>),
    Coupling(Option<CouplingCache<T>>),
}

const VARIANCE_FLOOR_STD: f64 = 1e-3;

impl<T: Real> FlowModel<T> {
    /// Builds a model for `x` of shape `x_shape` conditioned on a
    /// `y_channels` observation of the same spatial size. Couplings start at
    /// the identity (zero last layer), actnorm at unit scale.
    pub fn new(config: FlowConfig, x_shape: (usize, usize, usize), y_channels: usize) -> Result<Self> {
        config.validate()?;
        let (c0, h0, w0) = x_shape;
        let div = 1usize << config.levels;
        if c0 == 0 || h0 == 0 || w0 == 0 || h0 % div != 0 || w0 % div != 0 {
            return Err(Error::invalid(format!(
                "resolution {h0}x{w0} not divisible by 2^{} for {} levels",
                config.levels, config.levels
            )));
        }
        let mut rng_init = rng::stream(config.seed, rng::INIT);
        let mut rng_perm = rng::stream(config.seed, rng::PERM);
        let mut ops = Vec::new();
        let mut table: Vec<ParamInfo> = Vec::new();
        let mut params: Vec<T> = Vec::new();
        let mut alloc = |name: String, shape: Vec<usize>, fill: &mut dyn FnMut() -> f64| {
            let offset = params.len();
            let n: usize = shape.iter().product();
            params.extend((0..n).map(|_| T::c(fill())));
            table.push(ParamInfo { name, shape, offset });
            offset
        };
        let (mut c, mut h, mut w) = (c0, h0, w0);
        let mut z_offset = 0;
        let mut cc = y_channels;
        for level in 0..config.levels {
            ops.push(Op::Squeeze { c, h, w });
            c *= 4;
            h /= 2;
            w /= 2;
            cc *= 4;
            let hw = h * w;
            for step in 0..config.steps_per_level {
                let tag = format!("l{level}.k{step}");
                let logs = alloc(format!("{tag}.actnorm.logs"), vec![c], &mut || 0.0);
                let bias = alloc(format!("{tag}.actnorm.bias"), vec![c], &mut || 0.0);
                ops.push(Op::ActNorm { c, hw, logs, bias });
                let perm: Vec<usize> = if level == 0 {
                    // keep the checkerboard split, alternating which half moves
                    let half = c / 2;
                    (0..c).map(|i| if step % 2 == 0 { i } else { (i + half) % c }).collect()
                } else {
                    let mut p: Vec<usize> = (0..c).collect();
                    p.shuffle(&mut rng_perm);
                    p
                };
                ops.push(Op::Permute { c, hw, perm });
                let (ca, cb, hd) = (c / 2, c - c / 2, config.hidden_channels);
                let cin = ca + cc;
                let s1 = (1.0 / (cin * 9) as f64).sqrt();
                let s2 = (1.0 / hd as f64).sqrt();
                let mut gauss = |s: f64| {
                    let v: f64 = StandardNormal.sample(&mut rng_init);
                    s * v
                };
                let w1 = alloc(format!("{tag}.coupling.w1"), vec![hd, cin, 3, 3], &mut || gauss(s1));
                let b1 = alloc(format!("{tag}.coupling.b1"), vec![hd], &mut || 0.0);
                let w2 = alloc(format!("{tag}.coupling.w2"), vec![hd, hd], &mut || gauss(s2));
                let b2 = alloc(format!("{tag}.coupling.b2"), vec![hd], &mut || 0.0);
                let w3 = alloc(format!("{tag}.coupling.w3"), vec![2 * cb, hd, 3, 3], &mut || 0.0);
                let b3 = alloc(format!("{tag}.coupling.b3"), vec![2 * cb], &mut || 0.0);
                ops.push(Op::Coupling(Coupling {
                    ca,
                    cb,
                    cc,
                    hidden: hd,
                    h,
                    w,
                    w1,
                    b1,
                    w2,
                    b2,
                    w3,
                    b3,
                }));
            }
            if level + 1 < config.levels {
                let keep = c / 2;
                ops.push(Op::Split { keep: keep * hw, offset: z_offset });
                z_offset += (c - keep) * hw;
                c = keep;
            }
        }
        Ok(FlowModel {
            config,
            x_shape,
            y_channels,
            ops,
            params,
            table,
            tail: z_offset,
            initialized: false,
            floored: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        let (c, h, w) = self.x_shape;
        c * h * w
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_table(&self) -> &[ParamInfo] {
        &self.table
    }

    /// Adds `N(0, scale^2)` noise to every parameter. Used to move a model
    /// away from its identity initialization in tests.
    pub fn perturb(&mut self, scale: f64, seed: u64) {
        let mut r = rng::stream(seed, rng::INIT);
        for p in &mut self.params {
            let v: f64 = StandardNormal.sample(&mut r);
            *p += T::c(scale * v);
        }
    }

    fn alpha(&self) -> T {
        T::c(self.config.clamp)
    }

    fn check_x(&self, x: &ArrayView3<T>) -> Result<()> {
        if x.dim() != self.x_shape {
            return Err(Error::invalid(format!("x shape {:?}, model expects {:?}", x.dim(), self.x_shape)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow input".into()));
        }
        Ok(())
    }

    /// Conditioning features, one per level, each `y` squeezed `level + 1`
    /// times.
    pub fn cond_pyramid(&self, y: &ArrayView3<T>) -> Result<Vec<Array3<T>>> {
        let (_, h, w) = self.x_shape;
        if y.dim() != (self.y_channels, h, w) {
            return Err(Error::invalid(format!(
                "y shape {:?}, model expects {:?}",
                y.dim(),
                (self.y_channels, h, w)
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conditioning input".into()));
        }
        let (mut c, mut h, mut w) = y.dim();
        let mut cur: Vec<T> = y.iter().copied().collect();
        let mut out = Vec::with_capacity(self.config.levels);
        for _ in 0..self.config.levels {
            cur = squeeze(&cur, c, h, w);
            c *= 4;
            h /= 2;
            w /= 2;
            out.push(Array3::from_shape_vec((c, h, w), cur.clone()).expect("shape"));
        }
        Ok(out)
    }

    pub fn forward(&self, x: &ArrayView3<T>, y: &ArrayView3<T>) -> Result<LatentCode<T>> {
        self.check_x(x)?;
        let cond = self.cond_pyramid(y)?;
        let cond: Vec<&[T]> = cond.iter().map(|a| a.as_slice().expect("standard layout")).collect();
        let xs: Vec<T> = x.iter().copied().collect();
        let (z, logdet) = self.run(xs, &cond, None);
        Ok(LatentCode { z: Array1::from(z), logdet })
    }

    /// `x = f^{-1}(z; y)`.
    pub fn inverse(&self, z: &Array1<T>, y: &ArrayView3<T>) -> Result<Array3<T>> {
        Ok(self.inverse_with_logdet(z, y)?.0)
    }

    /// Inverse pass and the log-determinant of the inverse map.
    pub fn inverse_with_logdet(&self, z: &Array1<T>, y: &ArrayView3<T>) -> Result<(Array3<T>, T)> {
        if z.len() != self.dim() {
            return Err(Error::invalid(format!("z has {} entries, model dimension is {}", z.len(), self.dim())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent input".into()));
        }
        let cond = self.cond_pyramid(y)?;
        let cond: Vec<&[T]> = cond.iter().map(|a| a.as_slice().expect("standard layout")).collect();
        let z = z.as_slice().expect("contiguous");
        let alpha = self.alpha();
        let p = &self.params;
        let mut h: Vec<T> = z[self.tail..].to_vec();
        let mut level = self.config.levels;
        let mut logdet = T::zero();
        for op in self.ops.iter().rev() {
            match op {
                Op::Squeeze { c, h: hh, w } => {
                    h = unsqueeze(&h, *c, *hh, *w);
                    level -= 1;
                }
                Op::ActNorm { c, hw, logs, bias } => {
                    for ch in 0..*c {
                        let (ls, b) = (p[logs + ch], p[bias + ch]);
                        let inv = (-ls).exp();
                        for v in &mut h[ch * hw..][..*hw] {
                            *v = (*v - b) * inv;
                        }
                        logdet -= ls * T::c(*hw as f64);
                    }
                }
                Op::Permute { hw, perm, .. } => {
                    h = unpermute(&h, perm, *hw);
                }
                Op::Coupling(cp) => {
                    logdet += cp.inverse(p, &mut h, cond[level - 1], alpha);
                }
                Op::Split { keep, offset } => {
                    h.extend_from_slice(&z[*offset..][..*keep]);
                }
            }
        }
        let (c, hh, w) = self.x_shape;
        Ok((Array3::from_shape_vec((c, hh, w), h).expect("shape"), logdet))
    }

    /// Forward pass on a flat sample, optionally recording what the backward
    /// pass needs.
    pub(crate) fn run(&self, mut h: Vec<T>, cond: &[&[T]], mut tape: Option<&mut Vec<Cache<T>>>) -> (Vec<T>, T) {
        let alpha = self.alpha();
        let p = &self.params;
        let mut z = vec![T::zero(); self.dim()];
        let mut level = 0;
        let mut logdet = T::zero();
        for op in &self.ops {
            let mut cache = Cache::None;
            match op {
                Op::Squeeze { c, h: hh, w } => {
                    h = squeeze(&h, *c, *hh, *w);
                    level += 1;
                }
                Op::ActNorm { c, hw, logs, bias } => {
                    if tape.is_some() {
                        cache = Cache::Input(h.clone());
                    }
                    for ch in 0..*c {
                        let (ls, b) = (p[logs + ch], p[bias + ch]);
                        let s = ls.exp();
                        for v in &mut h[ch * hw..][..*hw] {
                            *v = *v * s + b;
                        }
                        logdet += ls * T::c(*hw as f64);
                    }
                }
                Op::Permute { hw, perm, .. } => {
                    h = permute(&h, perm, *hw);
                }
                Op::Coupling(cp) => {
                    let mut slot = None;
                    let rec = if tape.is_some() { Some(&mut slot) } else { None };
                    logdet += cp.forward(p, &mut h, cond[level - 1], alpha, rec);
                    cache = Cache::Coupling(slot);
                }
                Op::Split { keep, offset } => {
                    let out = h.split_off(*keep);
                    z[*offset..][..out.len()].copy_from_slice(&out);
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(cache);
            }
        }
        z[self.tail..].copy_from_slice(&h);
        (z, logdet)
    }

    /// Reverse-mode pass. `gz` is `dL/dz`, `wl` is `dL/dlogdet`; parameter
    /// gradients are accumulated into `grad`.
    pub(crate) fn backward(&self, tape: &[Cache<T>], gz: &[T], wl: T, grad: &mut [T]) {
        let p = &self.params;
        let mut g: Vec<T> = gz[self.tail..].to_vec();
        for (op, cache) in self.ops.iter().zip(tape).rev() {
            match (op, cache) {
                (Op::Squeeze { c, h, w }, _) => {
                    g = unsqueeze(&g, *c, *h, *w);
                }
                (Op::ActNorm { c, hw, logs, bias }, Cache::Input(x)) => {
                    for ch in 0..*c {
                        let s = p[logs + ch].exp();
                        let (mut gs, mut gb) = (T::zero(), T::zero());
                        for (gv, &xv) in g[ch * hw..][..*hw].iter_mut().zip(&x[ch * hw..][..*hw]) {
                            gs += *gv * xv * s;
                            gb += *gv;
                            *gv *= s;
                        }
                        grad[logs + ch] += gs + wl * T::c(*hw as f64);
                        grad[bias + ch] += gb;
                    }
                }
                (Op::Permute { hw, perm, .. }, _) => {
                    g = unpermute(&g, perm, *hw);
                }
                (Op::Coupling(cp), Cache::Coupling(Some(cc))) => {
                    cp.backward(p, cc, &mut g, wl, grad);
                }
                (Op::Split { keep, offset }, _) => {
                    g.extend_from_slice(&gz[*offset..][..*keep]);
                }
                _ => unreachable!("tape does not match the model"),
            }
        }
    }

    /// Data-dependent actnorm initialization: every actnorm layer is set so
    /// its output on `batch` has zero mean and unit variance per channel.
    /// A no-op once the model is initialized.
    pub fn actnorm_init(&mut self, xs: &[ArrayView3<T>], ys: &[ArrayView3<T>]) -> Result<()> {
        if self.initialized {
            return Ok(());
        }
        if xs.len() < 8 || xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "actnorm init needs at least 8 matched pairs, got {} x and {} y",
                xs.len(),
                ys.len()
            )));
        }
        let mut hs = Vec::with_capacity(xs.len());
        let mut conds = Vec::with_capacity(xs.len());
        for (x, y) in xs.iter().zip(ys) {
            self.check_x(x)?;
            hs.push(x.iter().copied().collect::<Vec<T>>());
            conds.push(self.cond_pyramid(y)?);
        }
        let alpha = self.alpha();
        let mut level = 0;
        let ops = self.ops.clone();
        for (idx, op) in ops.iter().enumerate() {
            match op {
                Op::Squeeze { c, h, w } => {
                    for hv in &mut hs {
                        *hv = squeeze(hv, *c, *h, *w);
                    }
                    level += 1;
                }
                Op::ActNorm { c, hw, logs, bias } => {
                    let n = T::c((hs.len() * hw) as f64);
                    for ch in 0..*c {
                        let mut mean = T::zero();
                        for hv in &hs {
                            mean += hv[ch * hw..][..*hw].iter().copied().sum::<T>();
                        }
                        mean = mean / n;
                        let mut var = T::zero();
                        for hv in &hs {
                            var += hv[ch * hw..][..*hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                        }
                        let mut std = (var / n).sqrt();
                        let floor = T::c(VARIANCE_FLOOR_STD);
                        if !(std >= floor) {
                            std = floor;
                            self.floored.push((idx, ch));
                        }
                        self.params[logs + ch] = -std.ln();
                        self.params[bias + ch] = -mean / std;
                        let (s, b) = (std.recip(), -mean / std);
                        for hv in &mut hs {
                            for v in &mut hv[ch * hw..][..*hw] {
                                *v = *v * s + b;
                            }
                        }
                    }
                }
                Op::Permute { hw, perm, .. } => {
                    for hv in &mut hs {
                        *hv = permute(hv, perm, *hw);
                    }
                }
                Op::Coupling(cp) => {
                    for (hv, cond) in hs.iter_mut().zip(&conds) {
                        let cl = cond[level - 1].as_slice().expect("standard layout");
                        cp.forward(&self.params, hv, cl, alpha, None);
                    }
                }
                Op::Split { keep, .. } => {
                    for hv in &mut hs {
                        hv.truncate(*keep);
                    }
                }
            }
        }
        self.initialized = true;
        Ok(())
    }
}

/// Output channel `i` is input channel `perm[i]`.
fn permute<T: Real>(x: &[T], perm: &[usize], hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for &src in perm {
        out.extend_from_slice(&x[src * hw..][..hw]);
    }
    out
}

fn unpermute<T: Real>(x: &[T], perm: &[usize], hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (i, &src) in perm.iter().enumerate() {
        out[src * hw..][..hw].copy_from_slice(&x[i * hw..][..hw]);
    }
    out
}
