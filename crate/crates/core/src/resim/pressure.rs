//! Implicit pressure step: two-point flux finite volumes on the 5-point
//! stencil, solved with incomplete-Cholesky preconditioned CG.
//!
//! The unknown is the overpressure relative to the brine hydrostat, so an
//! undisturbed brine-filled section has a zero right-hand side.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geomodel::Grid2D;

use super::FluidProps;

pub const CG_TOLERANCE: f64 = 1e-8;

/// Geometric transmissibilities (harmonic face permeability × face length /
/// center distance, per meter of out-of-plane thickness).
#[derive(Debug, Clone)]
pub struct Transmissibility {
    pub grid: Grid2D,
    /// Face between (iz, ix) and (iz, ix+1); shape (nz, nx-1).
    pub x: Array2<f64>,
    /// Face between (iz, ix) and (iz+1, ix); shape (nz-1, nx).
    pub z: Array2<f64>,
    /// Face between top row cells and the Dirichlet boundary; length nx.
    pub top: Vec<f64>,
    /// Harmonic face permeability times dx for vertical faces, used by the
    /// buoyancy term; shape (nz+1, nx), row 0 is the top boundary.
    pub k_dx_z: Array2<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

impl Transmissibility {
    pub fn new(grid: Grid2D, perm: &Array2<f64>) -> Self {
        let (nz, nx) = grid.shape();
        let x = Array2::from_shape_fn((nz, nx - 1), |(iz, ix)| {
            harmonic(perm[[iz, ix]], perm[[iz, ix + 1]]) * grid.dz / grid.dx
        });
        let z = Array2::from_shape_fn((nz - 1, nx), |(iz, ix)| {
            harmonic(perm[[iz, ix]], perm[[iz + 1, ix]]) * grid.dx / grid.dz
        });
        let top = (0..nx)
            .map(|ix| perm[[0, ix]] * grid.dx / (0.5 * grid.dz))
            .collect();
        let k_dx_z = Array2::from_shape_fn((nz + 1, nx), |(iz, ix)| {
            if iz == 0 {
                perm[[0, ix]] * grid.dx
            } else if iz == nz {
                0.0
            } else {
                harmonic(perm[[iz - 1, ix]], perm[[iz, ix]]) * grid.dx
            }
        });
        Self { grid, x, z, top, k_dx_z }
    }
}

/// Per-cell total mobility and mobility-weighted density.
pub(crate) fn cell_mobility(s: &Array2<f64>, props: &FluidProps) -> (Array2<f64>, Array2<f64>) {
    let lam_t = s.mapv(|s| props.mobility_co2(s) + props.mobility_brine(s));
    let rho = s.mapv(|s| {
        let lg = props.mobility_co2(s);
        let lw = props.mobility_brine(s);
        (lg * props.rho_co2 + lw * props.rho_brine) / (lg + lw)
    });
    (lam_t, rho)
}

/// Assembled symmetric system `A δ = b` on the 5-point stencil.
#[derive(Debug, Clone)]
pub struct PressureSystem {
    pub nx: usize,
    pub nz: usize,
    pub diag: Vec<f64>,
    /// Coupling to the east neighbor (positive number, enters as -east).
    pub east: Vec<f64>,
    /// Coupling to the south neighbor.
    pub south: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Per-face coefficients kept for flux reconstruction.
    pub(crate) face_x: Array2<f64>,
    pub(crate) face_z: Array2<f64>,
    pub(crate) face_top: Vec<f64>,
    pub(crate) grav_z: Array2<f64>,
}

impl PressureSystem {
    /// `source` is the injected volume rate per cell (m³/s per m). Faces
    /// touching a `barrier` cell pass brine only.
    pub fn assemble(
        trans: &Transmissibility,
        s: &Array2<f64>,
        source: &Array2<f64>,
        props: &FluidProps,
        barrier: Option<&Array2<bool>>,
    ) -> Self {
        let grid = trans.grid;
        let (nz, nx) = grid.shape();
        let n = nz * nx;
        let (lam, rho) = cell_mobility(s, props);
        let g = props.gravity;

        let blocked = |a: (usize, usize), b: (usize, usize)| barrier.is_some_and(|m| m[a] || m[b]);
        let brine = |a: (usize, usize), b: (usize, usize)| {
            props.mobility_brine(s[a]).min(props.mobility_brine(s[b]))
        };
        let face_x = Array2::from_shape_fn((nz, nx - 1), |(iz, ix)| {
            let (a, b) = ((iz, ix), (iz, ix + 1));
            let m = if blocked(a, b) { brine(a, b) } else { 0.5 * (lam[a] + lam[b]) };
            trans.x[[iz, ix]] * m
        });
        let face_z = Array2::from_shape_fn((nz - 1, nx), |(iz, ix)| {
            let (a, b) = ((iz, ix), (iz + 1, ix));
            let m = if blocked(a, b) { brine(a, b) } else { 0.5 * (lam[a] + lam[b]) };
            trans.z[[iz, ix]] * m
        });
        // Only brine crosses the top boundary (CO2 is held below it), so the
        // boundary face sees the brine mobility and no buoyancy drive.
        let face_top: Vec<f64> = (0..nx)
            .map(|ix| trans.top[ix] * props.mobility_brine(s[[0, ix]]))
            .collect();
        // Buoyancy drive per face: (rho_face - rho_brine) g Δz, Δz = distance
        // between the centers the face connects.
        let grav_z = Array2::from_shape_fn((nz - 1, nx), |(iz, ix)| {
            let (a, b) = ((iz, ix), (iz + 1, ix));
            if blocked(a, b) {
                0.0
            } else {
                (0.5 * (rho[a] + rho[b]) - props.rho_brine) * g * grid.dz
            }
        });

        let mut diag = vec![0.0; n];
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        let mut rhs: Vec<f64> = source.iter().copied().collect();
        for iz in 0..nz {
            for ix in 0..nx {
                let k = iz * nx + ix;
                if ix + 1 < nx {
                    let a = face_x[[iz, ix]];
                    east[k] = a;
                    diag[k] += a;
                    diag[k + 1] += a;
                }
                if iz + 1 < nz {
                    let a = face_z[[iz, ix]];
                    south[k] = a;
                    diag[k] += a;
                    diag[k + nx] += a;
                    let gterm = a * grav_z[[iz, ix]];
                    rhs[k] -= gterm;
                    rhs[k + nx] += gterm;
                }
            }
        }
        for ix in 0..nx {
            diag[ix] += face_top[ix];
        }
        Self {
            nx,
            nz,
            diag,
            east,
            south,
            rhs,
            face_x,
            face_z,
            face_top,
            grav_z,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nx = self.nx;
        let n = self.len();
        for (k, v) in y.iter_mut().enumerate() {
            *v = self.diag[k] * x[k];
        }
        for row in (0..n).step_by(nx) {
            for k in row..row + nx - 1 {
                let a = self.east[k];
                y[k] -= a * x[k + 1];
                y[k + 1] -= a * x[k];
            }
        }
        for k in 0..n - nx {
            let a = self.south[k];
            y[k] -= a * x[k + nx];
            y[k + nx] -= a * x[k];
        }
    }

    /// Pivots of the zero-fill incomplete Cholesky factorization.
    fn ic0_pivots(&self) -> Vec<f64> {
        let nx = self.nx;
        let mut d = vec![0.0; self.len()];
        for k in 0..self.len() {
            let mut p = self.diag[k];
            if k % nx > 0 {
                p -= self.east[k - 1] * self.east[k - 1] / d[k - 1];
            }
            if k >= nx {
                p -= self.south[k - nx] * self.south[k - nx] / d[k - nx];
            }
            // zero-fill IC can break down on extreme contrasts; fall back to
            // the Jacobi pivot
            d[k] = if p > 1e-12 * self.diag[k] { p } else { self.diag[k] };
        }
        d
    }

    /// `inv_d` holds reciprocal pivots.
    fn precondition(&self, inv_d: &[f64], r: &[f64], z: &mut [f64]) {
        let nx = self.nx;
        let n = self.len();
        for row in (0..n).step_by(nx) {
            for k in row..row + nx {
                let mut v = r[k];
                if k > row {
                    v += self.east[k - 1] * z[k - 1];
                }
                if row > 0 {
                    v += self.south[k - nx] * z[k - nx];
                }
                z[k] = v * inv_d[k];
            }
        }
        for row in (0..n).step_by(nx).rev() {
            for k in (row..row + nx).rev() {
                let mut v = 0.0;
                if k + 1 < row + nx {
                    v += self.east[k] * z[k + 1];
                }
                if k + nx < n {
                    v += self.south[k] * z[k + nx];
                }
                z[k] += v * inv_d[k];
            }
        }
    }

    /// Preconditioned CG from the warm start `x`, to `‖r‖ ≤ tol ‖b‖`.
    pub fn solve(&self, x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
        let n = self.len();
        let b_norm = norm(&self.rhs);
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let d: Vec<f64> = self.ic0_pivots().iter().map(|p| 1.0 / p).collect();
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri = bi - *ri;
        }
        if norm(&r) <= tol * b_norm {
            return Ok(0);
        }
        let mut z = vec![0.0; n];
        self.precondition(&d, &r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SolverFailure {
                    iterations: it,
                    residual: norm(&r) / b_norm,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let res = norm(&r) / b_norm;
            if res <= tol {
                return Ok(it);
            }
            self.precondition(&d, &r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let mut ax = vec![0.0; n];
        self.apply(x, &mut ax);
        let res = ax
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
            / b_norm;
        Err(Error::SolverFailure {
            iterations: max_iter,
            residual: res,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
