//! Kernels on single `C x H x W` samples stored row-major.

use super::real::{gemm, Real};

/// Channel order of the 2x2 sub-positions after a squeeze. The first two are
/// the diagonal of the block, so a channel split right after squeezing a
/// single-channel image is a checkerboard.
pub(crate) const SUB: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

/// `C x H x W -> 4C x H/2 x W/2`, output channel `q C + c`.
pub(crate) fn squeeze<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.len()];
    for (q, &(di, dj)) in SUB.iter().enumerate() {
        for ch in 0..c {
            let dst = &mut out[(q * c + ch) * h2 * w2..][..h2 * w2];
            let src = &x[ch * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(2 * i + di) * w + 2 * j + dj];
                }
            }
        }
    }
    out
}

/// Inverse of [`squeeze`]; `c, h, w` describe the unsqueezed shape.
pub(crate) fn unsqueeze<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.len()];
    for (q, &(di, dj)) in SUB.iter().enumerate() {
        for ch in 0..c {
            let src = &x[(q * c + ch) * h2 * w2..][..h2 * w2];
            let dst = &mut out[ch * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[(2 * i + di) * w + 2 * j + dj] = src[i * w2 + j];
                }
            }
        }
    }
    out
}

/// 3x3 patches with zero padding: `(c * 9) x (h * w)`.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ch in 0..c {
        let src = &x[ch * hw..][..hw];
        for ki in 0..3 {
            for kj in 0..3 {
                let row = &mut cols[((ch * 3 + ki) * 3 + kj) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let si = si as usize;
                    for j in 0..w {
                        let sj = j as isize + kj as isize - 1;
                        if sj >= 0 && sj < w as isize {
                            row[i * w + j] = src[si * w + sj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulated into `gx`.
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, gx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let dst = &mut gx[ch * hw..][..hw];
        for ki in 0..3 {
            for kj in 0..3 {
                let row = &cols[((ch * 3 + ki) * 3 + kj) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let si = si as usize;
                    for j in 0..w {
                        let sj = j as isize + kj as isize - 1;
                        if sj >= 0 && sj < w as isize {
                            dst[si * w + sj as usize] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W cols + b` with `W: co x k`, `cols: k x hw`.
pub(crate) fn affine<T: Real>(wt: &[T], b: &[T], cols: &[T], co: usize, k: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); co * hw];
    for (o, row) in out.chunks_mut(hw).enumerate() {
        row.fill(b[o]);
    }
    gemm(co, k, hw, wt, false, cols, false, T::one(), &mut out);
    out
}

/// Gradients of [`affine`]: accumulates into `gw`, `gb` and returns the
/// gradient with respect to `cols`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_back<T: Real>(
    wt: &[T],
    cols: &[T],
    gout: &[T],
    co: usize,
    k: usize,
    hw: usize,
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    gemm(co, hw, k, gout, false, cols, true, T::one(), gw);
    for (o, row) in gout.chunks(hw).enumerate() {
        gb[o] += row.iter().copied().sum::<T>();
    }
    let mut gcols = vec![T::zero(); k * hw];
    gemm(k, co, hw, wt, true, gout, false, T::zero(), &mut gcols);
    gcols
}

pub(crate) fn elu<T: Real>(u: T) -> T {
    if u > T::zero() {
        u
    } else {
        u.exp_m1()
    }
}

pub(crate) fn elu_grad<T: Real>(u: T) -> T {
    if u > T::zero() {
        T::one()
    } else {
        u.exp()
    }
}

/// Offsets of one coupling layer's parameters in the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Coupling {
    pub ca: usize,
    pub cb: usize,
    pub cc: usize,
    pub hidden: usize,
    pub h: usize,
    pub w: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

/// Activations kept for the backward pass.
pub(crate) struct CouplingCache<T> {
    cols1: Vec<T>,
    u1: Vec<T>,
    a1: Vec<T>,
    u2: Vec<T>,
    cols3: Vec<T>,
    tanh: Vec<T>,
    scale: Vec<T>,
    xb: Vec<T>,
}

impl Coupling {

    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Conditioner output `(raw_s, t)` stacked as `2 cb x hw`.
    fn conditioner<T: Real>(&self, p: &[T], xa: &[T], cond: &[T]) -> (Vec<T>, [Vec<T>; 5]) {
        let (hw, hd, cin) = (self.hw(), self.hidden, self.ca + self.cc);
        let mut input = Vec::with_capacity(cin * hw);
        input.extend_from_slice(xa);
        input.extend_from_slice(cond);
        let cols1 = im2col(&input, cin, self.h, self.w);
        let u1 = affine(&p[self.w1..][..hd * cin * 9], &p[self.b1..][..hd], &cols1, hd, cin * 9, hw);
        let a1: Vec<T> = u1.iter().map(|&u| elu(u)).collect();
        let u2 = affine(&p[self.w2..][..hd * hd], &p[self.b2..][..hd], &a1, hd, hd, hw);
        let a2: Vec<T> = u2.iter().map(|&u| elu(u)).collect();
        let cols3 = im2col(&a2, hd, self.h, self.w);
        let raw = affine(&p[self.w3..][..2 * self.cb * hd * 9], &p[self.b3..][..2 * self.cb], &cols3, 2 * self.cb, hd * 9, hw);
        (raw, [cols1, u1, a1, u2, cols3])
    }

    /// Transforms the second half of `x` in place, returns `sum log s`.
    pub fn forward<T: Real>(
        &self,
        p: &[T],
        x: &mut [T],
        cond: &[T],
        alpha: T,
        cache: Option<&mut Option<CouplingCache<T>>>,
    ) -> T {
        let n = self.cb * self.hw();
        let (xa, xb) = x.split_at_mut(self.ca * self.hw());
        let (raw, [cols1, u1, a1, u2, cols3]) = self.conditioner(p, xa, cond);
        let mut logdet = T::zero();
        let mut tanh = Vec::with_capacity(n);
        let mut scale = Vec::with_capacity(n);
        let xb_in = cache.as_ref().map(|_| xb.to_vec());
        for i in 0..n {
            let th = (raw[i] / alpha).tanh();
            let log_s = alpha * th;
            let s = log_s.exp();
            logdet += log_s;
            xb[i] = s * xb[i] + raw[n + i];
            tanh.push(th);
            scale.push(s);
        }
        if let Some(slot) = cache {
            *slot = Some(CouplingCache {
                cols1,
                u1,
                a1,
                u2,
                cols3,
                tanh,
                scale,
                xb: xb_in.unwrap_or_default(),
            });
        }
        logdet
    }

    /// Undoes [`Coupling::forward`] in place, returns `-sum log s`.
    pub fn inverse<T: Real>(&self, p: &[T], x: &mut [T], cond: &[T], alpha: T) -> T {
        let n = self.cb * self.hw();
        let (xa, xb) = x.split_at_mut(self.ca * self.hw());
        let (raw, _) = self.conditioner(p, xa, cond);
        let mut logdet = T::zero();
        for i in 0..n {
            let log_s = alpha * (raw[i] / alpha).tanh();
            logdet -= log_s;
            xb[i] = (xb[i] - raw[n + i]) * (-log_s).exp();
        }
        logdet
    }

    /// Replaces `g` (gradient at the output) by the gradient at the input and
    /// accumulates parameter gradients. `wl` weights the logdet term.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        cache: &CouplingCache<T>,
        g: &mut [T],
        wl: T,
        grad: &mut [T],
    ) {
        let (hw, hd, cin, cb) = (self.hw(), self.hidden, self.ca + self.cc, self.cb);
        let n = cb * hw;
        let (ga, gb) = g.split_at_mut(self.ca * hw);
        let mut graw = vec![T::zero(); 2 * n];
        for i in 0..n {
            let th = cache.tanh[i];
            graw[i] = (gb[i] * cache.xb[i] * cache.scale[i] + wl) * (T::one() - th * th);
            graw[n + i] = gb[i];
            gb[i] *= cache.scale[i];
        }
        let (gw3, rest) = grad[self.w3..].split_at_mut(2 * cb * hd * 9);
        let gcols3 = affine_back(
            &p[self.w3..][..2 * cb * hd * 9],
            &cache.cols3,
            &graw,
            2 * cb,
            hd * 9,
            hw,
            gw3,
            &mut rest[self.b3 - self.w3 - 2 * cb * hd * 9..][..2 * cb],
        );
        let mut ga2 = vec![T::zero(); hd * hw];
        col2im(&gcols3, hd, self.h, self.w, &mut ga2);
        for (g, &u) in ga2.iter_mut().zip(&cache.u2) {
            *g *= elu_grad(u);
        }
        let (gw2, rest) = grad[self.w2..].split_at_mut(hd * hd);
        let mut ga1 = affine_back(
            &p[self.w2..][..hd * hd],
            &cache.a1,
            &ga2,
            hd,
            hd,
            hw,
            gw2,
            &mut rest[self.b2 - self.w2 - hd * hd..][..hd],
        );
        for (g, &u) in ga1.iter_mut().zip(&cache.u1) {
            *g *= elu_grad(u);
        }
        let (gw1, rest) = grad[self.w1..].split_at_mut(hd * cin * 9);
        let gcols1 = affine_back(
            &p[self.w1..][..hd * cin * 9],
            &cache.cols1,
            &ga1,
            hd,
            cin * 9,
            hw,
            gw1,
            &mut rest[self.b1 - self.w1 - hd * cin * 9..][..hd],
        );
        let mut gin = vec![T::zero(); self.ca * hw];
        col2im(&gcols1[..self.ca * 9 * hw], self.ca, self.h, self.w, &mut gin);
        for (g, d) in ga.iter_mut().zip(gin) {
            *g += d;
        }
    }
}
