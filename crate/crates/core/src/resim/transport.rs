//! Explicit saturation update: first-order upwind fractional flow with an
//! upstream-mobility buoyancy term, sub-stepped to respect the CFL limit.

use ndarray::Array2;

use crate::geomodel::{EarthModel, Grid2D};

use super::FluidProps;

pub const CFL_SAFETY: f64 = 0.9;

/// Face volume fluxes (m³/s per m of thickness) driving the transport.
///
/// `flux_x[[iz, i]]` is the flux through the face left of column `i`,
/// positive toward +x; `flux_z[[i, ix]]` is the flux through the face above
/// row `i`, positive downward. Row/column 0 and nz/nx are boundary faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flux_x: Array2<f64>,
    pub flux_z: Array2<f64>,
    /// CO2 volume injected per cell, m³/s per m.
    pub source: Array2<f64>,
    /// Saturation of fluid entering through boundary faces.
    pub inflow_saturation: f64,
    /// Cells CO2 cannot enter (intact seal acting as a capillary barrier).
    pub barrier: Array2<bool>,
    /// CO2 cannot cross the top boundary; brine still can.
    pub closed_top: bool,
}

impl FlowField {
    pub fn zeros(grid: &Grid2D) -> Self {
        let (nz, nx) = grid.shape();
        Self {
            flux_x: Array2::zeros((nz, nx + 1)),
            flux_z: Array2::zeros((nz + 1, nx)),
            source: Array2::zeros((nz, nx)),
            inflow_saturation: 0.0,
            barrier: Array2::from_elem((nz, nx), false),
            closed_top: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportOutcome {
    pub saturation: Array2<f64>,
    /// CO2 volume added by sources over the step (m³ per m).
    pub injected: f64,
    /// CO2 volume that left through boundary faces (m³ per m).
    pub outflow: f64,
    pub substeps: usize,
    /// Largest amount any cell ended outside [0, 1] before clamping.
    pub bound_violation: f64,
}

/// Upper bound on `df/ds` over [0, 1].
fn max_frac_flow_slope(props: &FluidProps) -> f64 {
    const N: usize = 4096;
    let h = 1.0 / N as f64;
    let mut best = 0.0f64;
    let mut prev = props.frac_flow(0.0);
    for i in 1..=N {
        let cur = props.frac_flow(i as f64 * h);
        best = best.max((cur - prev).abs() / h);
        prev = cur;
    }
    1.05 * best
}

/// Flat row-major working copies of the fields the sub-step loop touches.
struct Stepper<'a> {
    props: &'a FluidProps,
    nx: usize,
    nz: usize,
    /// (nz, nx+1) and (nz+1, nx), row-major.
    fx: Vec<f64>,
    fz: Vec<f64>,
    source: Vec<f64>,
    barrier: Vec<bool>,
    closed_top: bool,
    s_in: f64,
    pore_volume: Vec<f64>,
    /// Buoyancy conductance `K_face dx Δρ g` per vertical face, (nz+1, nx).
    buoyancy: Vec<f64>,
    /// Bound on `df/ds`.
    slope: f64,
    /// Per cell: sum of |face flux| and buoyancy conductance of the open
    /// faces above and below.
    flux_sum: Vec<f64>,
    g_up: Vec<f64>,
    g_down: Vec<f64>,
    spill: Vec<usize>,
    /// Bounding box of the source cells, if any.
    sources: Option<Window>,
    frac: Vec<f64>,
    lam_g: Vec<f64>,
    lam_w: Vec<f64>,
    net: Vec<f64>,
}

/// Half-open row and column bounds of the region that can exchange CO2.
#[derive(Debug, Clone, Copy)]
struct Window {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

impl Stepper<'_> {
    /// Bounding box of cells holding CO2 inside `within`.
    fn occupied(&self, s: &[f64], within: Window) -> Option<Window> {
        bounding_box(within, |k| s[k] > 0.0, self.nx)
    }

    /// `occupied` joined with the sources and padded by one cell. Faces
    /// outside the window join two CO2-free cells and carry no CO2.
    fn window(&self, occupied: Option<Window>) -> Option<Window> {
        let (nz, nx) = (self.nz, self.nx);
        if self.s_in > 0.0 {
            return Some(Window { r0: 0, r1: nz, c0: 0, c1: nx });
        }
        let w = match (occupied, self.sources) {
            (Some(a), Some(b)) => Window {
                r0: a.r0.min(b.r0),
                r1: a.r1.max(b.r1),
                c0: a.c0.min(b.c0),
                c1: a.c1.max(b.c1),
            },
            (a, b) => a.or(b)?,
        };
        Some(Window {
            r0: w.r0.saturating_sub(1),
            r1: (w.r1 + 1).min(nz),
            c0: w.c0.saturating_sub(1),
            c1: (w.c1 + 1).min(nx),
        })
    }

    fn refresh_mobilities(&mut self, s: &[f64], w: Window) {
        let p = self.props;
        for iz in w.r0..w.r1 {
            for k in iz * self.nx + w.c0..iz * self.nx + w.c1 {
                let lg = p.mobility_co2(s[k]);
                let lw = p.mobility_brine(s[k]);
                self.lam_g[k] = lg;
                self.lam_w[k] = lw;
                self.frac[k] = if lg + lw > 0.0 { lg / (lg + lw) } else { 0.0 };
            }
        }
    }

    /// Largest sub-step in the window that keeps every cell in [0, 1].
    ///
    /// Writing the update as `s' = s + dt/V (in - out)`, CO2 leaving a cell
    /// is at most `s (slope Σ|u| + G_up λg/s)` and brine displaced from it at
    /// most `(1 - s) (slope Σ|u| + G_down λw/(1-s))`. Brine leaving through
    /// faces closed to CO2 is not covered; see `spill`.
    fn stable_dt(&self, s: &[f64], w: Window) -> f64 {
        let (nz, nx) = (self.nz, self.nx);
        let p = self.props;
        let lw_in = p.mobility_brine(self.s_in);
        let lg_in = p.mobility_co2(self.s_in);
        let mut dt = f64::INFINITY;
        for iz in w.r0..w.r1 {
            for ix in w.c0..w.c1 {
                let k = iz * nx + ix;
                if self.barrier[k] {
                    continue;
                }
                let mut loc = s[k];
                loc = loc.max(if iz > 0 { s[k - nx] } else { self.s_in });
                loc = loc.max(if iz + 1 < nz { s[k + nx] } else { self.s_in });
                loc = loc.max(if ix > 0 { s[k - 1] } else { self.s_in });
                loc = loc.max(if ix + 1 < nx { s[k + 1] } else { self.s_in });
                if loc <= 0.0 && self.source[k] <= 0.0 {
                    continue;
                }
                let (si, lg, lw) = (s[k], self.lam_g[k], self.lam_w[k]);
                let mut rate = self.slope * self.flux_sum[k];
                if si > 0.0 && lg > 0.0 && self.g_up[k] > 0.0 {
                    let lw_up = if iz > 0 { self.lam_w[k - nx] } else { lw_in };
                    rate += self.g_up[k] * (lg / si) * (lw_up / (lg + lw_up));
                }
                if si < 1.0 && lw > 0.0 && self.g_down[k] > 0.0 {
                    let lg_dn = if iz + 1 < nz { self.lam_g[k + nx] } else { lg_in };
                    rate += self.g_down[k] * (lw / (1.0 - si)) * (lg_dn / (lg_dn + lw));
                }
                if rate > 0.0 {
                    dt = dt.min(CFL_SAFETY * self.pore_volume[k] / rate);
                }
            }
        }
        dt
    }

    /// One explicit update in place; returns (injected, outflow, violation)
    /// and the cells left holding CO2.
    fn step(&mut self, s: &mut [f64], w: Window, dt: f64) -> (f64, f64, f64, Option<Window>) {
        let (nz, nx) = (self.nz, self.nx);
        let p = self.props;
        let f_in = p.frac_flow(self.s_in);
        let lw_in = p.mobility_brine(self.s_in);
        let lg_in = p.mobility_co2(self.s_in);
        let mut outflow = 0.0;
        for iz in w.r0..w.r1 {
            self.net[iz * nx + w.c0..iz * nx + w.c1].fill(0.0);
        }

        for iz in w.r0..w.r1 {
            let row = iz * nx;
            let frow = iz * (nx + 1);
            if w.c0 == 0 && !self.barrier[row] {
                let u = self.fx[frow];
                let f = if u > 0.0 { f_in } else { self.frac[row] } * u;
                self.net[row] += f;
                outflow -= f;
            }
            for ix in (w.c0 + 1)..w.c1 {
                let (l, r) = (row + ix - 1, row + ix);
                let u = self.fx[frow + ix];
                if u == 0.0 || self.barrier[l] || self.barrier[r] {
                    continue;
                }
                let f = if u > 0.0 { self.frac[l] } else { self.frac[r] } * u;
                self.net[l] -= f;
                self.net[r] += f;
            }
            let last = row + nx - 1;
            if w.c1 == nx && !self.barrier[last] {
                let u = self.fx[frow + nx];
                let f = if u > 0.0 { self.frac[last] } else { f_in } * u;
                self.net[last] -= f;
                outflow += f;
            }
        }
        for ix in w.c0..w.c1 {
            if w.r0 == 0 && !self.closed_top && !self.barrier[ix] {
                let f = vertical(self.fz[ix], self.buoyancy[ix], (f_in, lw_in), (self.frac[ix], self.lam_g[ix]));
                self.net[ix] += f;
                outflow -= f;
            }
            for iz in (w.r0 + 1)..w.r1 {
                let (up, lo) = ((iz - 1) * nx + ix, iz * nx + ix);
                if self.barrier[up] || self.barrier[lo] {
                    continue;
                }
                let f = vertical(
                    self.fz[lo],
                    self.buoyancy[lo],
                    (self.frac[up], self.lam_w[up]),
                    (self.frac[lo], self.lam_g[lo]),
                );
                self.net[up] -= f;
                self.net[lo] += f;
            }
            let up = (nz - 1) * nx + ix;
            if w.r1 == nz && !self.barrier[up] {
                let f = vertical(
                    self.fz[nz * nx + ix],
                    self.buoyancy[nz * nx + ix],
                    (self.frac[up], self.lam_w[up]),
                    (f_in, lg_in),
                );
                self.net[up] -= f;
                outflow += f;
            }
        }

        let mut injected = 0.0;
        let mut violation = 0.0f64;
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        self.spill.clear();
        for iz in w.r0..w.r1 {
            for ix in w.c0..w.c1 {
                let k = iz * nx + ix;
                let q = if self.barrier[k] { 0.0 } else { self.source[k] };
                injected += q * dt;
                let v = s[k] + dt * (self.net[k] + q) / self.pore_volume[k];
                if v > 1.0 {
                    self.spill.push(k);
                }
                violation = violation.max(-v);
                s[k] = v.max(0.0);
                if s[k] > 0.0 {
                    r0 = r0.min(iz);
                    r1 = r1.max(iz + 1);
                    c0 = c0.min(ix);
                    c1 = c1.max(ix + 1);
                }
            }
        }
        for i in 0..self.spill.len() {
            let k = self.spill[i];
            let (last, rest) = self.spill_down(s, k);
            r1 = r1.max(last / nx + 1);
            violation = violation.max(rest);
        }
        let occupied = (r1 > 0).then_some(Window { r0, r1, c0, c1 });
        (injected, outflow * dt, violation, occupied)
    }

    /// Frozen fluxes can keep draining brine through a face closed to CO2
    /// after the cell has filled up. The CO2 that does not fit is passed down
    /// the column, where the plume would thicken. Returns the lowest cell
    /// touched and any overfill left (only when the column below is full).
    fn spill_down(&self, s: &mut [f64], k: usize) -> (usize, f64) {
        let nx = self.nx;
        let n = s.len();
        let mut excess = (s[k] - 1.0) * self.pore_volume[k];
        s[k] = 1.0;
        let mut j = k;
        while excess > 0.0 && j + nx < n && !self.barrier[j + nx] {
            j += nx;
            let room = (1.0 - s[j]).max(0.0) * self.pore_volume[j];
            let take = room.min(excess);
            s[j] += take / self.pore_volume[j];
            excess -= take;
        }
        if excess > 0.0 {
            // nowhere to go: keep it and report
            s[k] += excess / self.pore_volume[k];
            let rest = s[k] - 1.0;
            s[k] = 1.0;
            return (j, rest);
        }
        (j, 0.0)
    }
}

/// CO2 flux through a vertical face, positive downward. `upper` and `lower`
/// are (fractional flow, mobility) of the cells above and below: brine
/// mobility above, CO2 mobility below.
fn vertical(u: f64, g: f64, upper: (f64, f64), lower: (f64, f64)) -> f64 {
    let adv = if u > 0.0 { upper.0 * u } else { lower.0 * u };
    let (lg, lw) = (lower.1, upper.1);
    let rise = if g > 0.0 && lg > 0.0 && lw > 0.0 {
        g * lg * lw / (lg + lw)
    } else {
        0.0
    };
    adv - rise
}

fn bounding_box(within: Window, hit: impl Fn(usize) -> bool, nx: usize) -> Option<Window> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for iz in within.r0..within.r1 {
        for ix in within.c0..within.c1 {
            if hit(iz * nx + ix) {
                r0 = r0.min(iz);
                r1 = r1.max(iz + 1);
                c0 = c0.min(ix);
                c1 = c1.max(ix + 1);
            }
        }
    }
    (r1 > 0).then_some(Window { r0, r1, c0, c1 })
}

/// Advance saturation by `dt` seconds under fixed face fluxes. Sub-steps are
/// taken automatically so each one satisfies CFL ≤ 0.9.
pub fn transport_step(
    s: &Array2<f64>,
    flow: &FlowField,
    model: &EarthModel,
    props: &FluidProps,
    dt: f64,
) -> TransportOutcome {
    transport_with_permeability(s, flow, &model.grid, &model.porosity, &model.permeability, props, dt)
}

fn flat<T: Clone>(a: &Array2<T>) -> Vec<T> {
    a.iter().cloned().collect()
}

pub(crate) fn transport_with_permeability(
    s: &Array2<f64>,
    flow: &FlowField,
    grid: &Grid2D,
    porosity: &Array2<f64>,
    perm: &Array2<f64>,
    props: &FluidProps,
    dt: f64,
) -> TransportOutcome {
    let (nz, nx) = grid.shape();
    let drho_g = (props.rho_brine - props.rho_co2) * props.gravity;
    let mut buoyancy = vec![0.0; (nz + 1) * nx];
    for ix in 0..nx {
        buoyancy[ix] = perm[[0, ix]] * grid.dx * drho_g;
        for iz in 1..nz {
            let (a, b) = (perm[[iz - 1, ix]], perm[[iz, ix]]);
            let k = if a + b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
            buoyancy[iz * nx + ix] = k * grid.dx * drho_g;
        }
    }
    let n = nz * nx;
    let fx = flat(&flow.flux_x);
    let fz = flat(&flow.flux_z);
    let barrier = flat(&flow.barrier);
    let mut flux_sum = vec![0.0; n];
    let mut g_up = vec![0.0; n];
    let mut g_down = vec![0.0; n];
    for iz in 0..nz {
        for ix in 0..nx {
            let k = iz * nx + ix;
            let (left, right) = (fx[iz * (nx + 1) + ix], fx[iz * (nx + 1) + ix + 1]);
            let (top, bottom) = (fz[k], fz[k + nx]);
            flux_sum[k] = left.abs() + right.abs() + top.abs() + bottom.abs();
            let top_blocked = if iz == 0 { flow.closed_top } else { barrier[k - nx] };
            if !top_blocked {
                g_up[k] = buoyancy[k];
            }
            if iz + 1 == nz || !barrier[k + nx] {
                g_down[k] = buoyancy[k + nx];
            }
        }
    }
    let source = flat(&flow.source);
    let full = Window { r0: 0, r1: nz, c0: 0, c1: nx };
    let sources = bounding_box(full, |k| source[k] > 0.0, nx);
    let mut stepper = Stepper {
        props,
        nx,
        nz,
        fx,
        fz,
        source,
        barrier,
        closed_top: flow.closed_top,
        s_in: flow.inflow_saturation,
        pore_volume: porosity.iter().map(|phi| phi * grid.cell_volume()).collect(),
        buoyancy,
        slope: max_frac_flow_slope(props),
        flux_sum,
        g_up,
        g_down,
        spill: Vec::new(),
        sources,
        frac: vec![0.0; n],
        lam_g: vec![0.0; n],
        lam_w: vec![0.0; n],
        net: vec![0.0; n],
    };

    let mut cur = flat(s);
    let (mut injected, mut outflow, mut violation) = (0.0, 0.0, 0.0f64);
    let mut substeps = 0;
    let mut remaining = if dt > 0.0 { dt } else { 0.0 };
    let mut occupied = stepper.occupied(&cur, full);
    while remaining > 0.0 {
        let Some(w) = stepper.window(occupied) else {
            break;
        };
        stepper.refresh_mobilities(&cur, w);
        let dt_max = stepper.stable_dt(&cur, w);
        // split what is left evenly rather than leave a sliver at the end
        let h = if dt_max >= remaining {
            remaining
        } else {
            remaining / (remaining / dt_max).ceil()
        };
        let (i, o, v, occ) = stepper.step(&mut cur, w, h);
        occupied = occ;
        injected += i;
        outflow += o;
        violation = violation.max(v);
        substeps += 1;
        remaining = if h >= remaining { 0.0 } else { remaining - h };
    }
    TransportOutcome {
        saturation: Array2::from_shape_vec((nz, nx), cur).expect("shape matches grid"),
        injected,
        outflow,
        substeps,
        bound_violation: violation,
    }
}
