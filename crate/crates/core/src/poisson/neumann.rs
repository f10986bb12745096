//! Cell-centered finite volumes on a polar grid of the disk.
//!
//! Ring `i` sits at `r_i = (i + 1/2) dr`, node `j` at angle `j dtheta`. The
//! radial flux through the face at `r_{i+1/2}` is `r_{i+1/2} (u_{i+1} - u_i) / dr`;
//! the innermost face has zero length and the outermost face carries the
//! Neumann datum. The angular direction is diagonalized by the FFT, so each
//! Fourier mode is one tridiagonal solve. Mode 0 is singular; it is solved
//! by accumulating fluxes outward and fixed by the mean-zero condition.

use std::f64::consts::TAU;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::flux::BoundaryFlux;
use super::jet::fit_harmonic_jet;
use crate::error::{Error, Result};
use crate::measures::{Ball, ScalarField};
use crate::numerics::{Mat2, Point};

/// Discretization of the angular second derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularStencil {
    /// Three-point difference, symbol `(2 - 2 cos(m dtheta)) / dtheta^2`.
    FivePoint,
    /// Exact symbol `m^2`.
    Spectral,
}

/// Polar node layout on a ball. In one dimension `n_theta = 2` and the two
/// "angles" are the right and left half-lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub ball: Ball,
    pub dim: usize,
    pub n_r: usize,
    pub n_theta: usize,
}

impl PolarGrid {
    pub fn dr(&self) -> f64 {
        self.ball.radius / self.n_r as f64
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr()
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    pub fn len(&self) -> usize {
        self.n_r * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of node `(i, j)` from the ball center.
    pub fn offset(&self, i: usize, j: usize) -> Point {
        let r = self.r(i);
        if self.dim == 1 {
            return [if j == 0 { r } else { -r }, 0.0];
        }
        let t = self.theta(j);
        [r * t.cos(), r * t.sin()]
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        let o = self.offset(i, j);
        [self.ball.center[0] + o[0], self.ball.center[1] + o[1]]
    }

    /// Quadrature weight (area) of node `(i, j)`.
    pub fn weight(&self, i: usize) -> f64 {
        if self.dim == 1 {
            self.dr()
        } else {
            self.r(i) * self.dr() * self.dtheta()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeumannOptions {
    pub n_r: usize,
    pub n_theta: usize,
    pub stencil: AngularStencil,
    /// Jet fit radius as a fraction of the ball radius.
    pub fit_fraction: f64,
    /// Absolute compatibility tolerance; defaults to `1e-3` times the
    /// reference mass of the flux.
    pub compat_tol: Option<f64>,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            n_r: 64,
            n_theta: 128,
            stencil: AngularStencil::Spectral,
            fit_fraction: 0.5,
            compat_tol: None,
        }
    }
}

/// Right-hand side of `Delta Phi = g`.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Constant(f64),
    Field(&'a ScalarField),
}

/// Solution of the Neumann problem and its harmonic part.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicPotential {
    pub grid: PolarGrid,
    /// `Phi` at the nodes, ring-major, mean zero.
    pub big_phi: Vec<f64>,
    pub c: f64,
    /// `phi = Phi - (c / 2d) |x|^2` at the nodes.
    pub phi: Vec<f64>,
    /// Gradient of `phi` at the nodes.
    pub grad: Vec<Point>,
    pub jet_b: Point,
    pub jet_a: Mat2,
    /// Total flux minus total source before repair.
    pub compat_defect: f64,
    /// Largest discrete Laplacian of `phi` over the nodes.
    pub laplace_defect: f64,
}

/// JSON form of the jet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub c: f64,
    pub b: Point,
    #[serde(rename = "A")]
    pub a: Mat2,
}

impl HarmonicPotential {
    pub fn jet(&self) -> Jet {
        Jet {
            c: self.c,
            b: self.jet_b,
            a: self.jet_a,
        }
    }

    /// Gradient of `phi` at `p` by cubic Lagrange interpolation in
    /// `(r, theta)`. Near the center the radial stencil continues through
    /// the pole onto the opposite rings.
    pub fn grad_phi(&self, p: &Point) -> Option<Point> {
        self.interpolate(p, |k| self.grad[k])
    }

    /// `phi` at `p`, interpolated like [`Self::grad_phi`].
    pub fn phi_at(&self, p: &Point) -> Option<f64> {
        self.interpolate(p, |k| [self.phi[k], 0.0]).map(|v| v[0])
    }

    fn interpolate(&self, p: &Point, val: impl Fn(usize) -> Point) -> Option<Point> {
        let g = &self.grid;
        let o = [p[0] - g.ball.center[0], p[1] - g.ball.center[1]];
        let r = (o[0] * o[0] + o[1] * o[1]).sqrt();
        if r > g.ball.radius * (1.0 + 1e-12) {
            return None;
        }
        let (nr, nt) = (g.n_r as i64, g.n_theta as i64);
        if g.dim == 1 {
            // the line as 2 n_r nodes, left to right
            let node = |k: i64| -> usize {
                if k < nr {
                    ((nr - 1 - k) * 2 + 1) as usize
                } else {
                    ((k - nr) * 2) as usize
                }
            };
            let u = (o[0] + g.ball.radius) / g.dr() - 0.5;
            let s0 = (u.floor() as i64 - 1).clamp(0, (2 * nr - 4).max(0));
            let w = lagrange4(u - s0 as f64);
            let mut acc = [0.0, 0.0];
            for (a, wa) in w.iter().enumerate() {
                let k = (s0 + a as i64).min(2 * nr - 1);
                let v = val(node(k));
                acc[0] += wa * v[0];
                acc[1] += wa * v[1];
            }
            return Some(acc);
        }
        let a = o[1].atan2(o[0]);
        let s = (if a < 0.0 { a + TAU } else { a }) / g.dtheta();
        let j0 = s.floor() as i64 - 1;
        let wt = lagrange4(s - j0 as f64);
        let t = r / g.dr() - 0.5;
        let i0 = (t.floor() as i64 - 1).min(nr - 4);
        let wr = lagrange4(t - i0 as f64);
        let mut acc = [0.0, 0.0];
        for (di, w_r) in wr.iter().enumerate() {
            let i = i0 + di as i64;
            // negative ring index -k-1 is ring k seen from the opposite side
            let (ring, half) = if i < 0 { (-i - 1, nt / 2) } else { (i, 0) };
            for (dj, w_t) in wt.iter().enumerate() {
                let j = (j0 + dj as i64 + half).rem_euclid(nt);
                let v = val((ring * nt + j) as usize);
                acc[0] += w_r * w_t * v[0];
                acc[1] += w_r * w_t * v[1];
            }
        }
        Some(acc)
    }
}

/// Cubic Lagrange weights for nodes at 0, 1, 2, 3 evaluated at `x`.
fn lagrange4(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Solve `Delta Phi = g` in the flux ball with `nu . grad Phi` given by
/// `flux`, after projecting the flux onto compatible data.
pub fn solve_neumann(
    g: Source<'_>,
    flux: &BoundaryFlux,
    opts: &NeumannOptions,
) -> Result<HarmonicPotential> {
    let dim = flux.dim;
    if opts.n_r < 2 || (dim == 2 && (opts.n_theta < 8 || !opts.n_theta.is_multiple_of(2))) {
        return Err(Error::InvalidInput(format!(
            "polar grid {}x{} too small (need n_r >= 2, even n_theta >= 8)",
            opts.n_r, opts.n_theta
        )));
    }
    let grid = PolarGrid {
        ball: flux.ball,
        dim,
        n_r: opts.n_r,
        n_theta: if dim == 1 { 2 } else { opts.n_theta },
    };
    let gv = sample_source(&grid, g)?;
    let total_source: f64 = (0..grid.n_r)
        .map(|i| grid.weight(i) * gv[i * grid.n_theta..(i + 1) * grid.n_theta].iter().sum::<f64>())
        .sum();
    let volume: f64 = (0..grid.n_r).map(|i| grid.weight(i) * grid.n_theta as f64).sum();
    let c = total_source / volume;
    let defect = flux.net() - total_source;
    let tol = opts
        .compat_tol
        .unwrap_or(1e-3 * flux.reference_mass.abs());
    if defect.abs() > 10.0 * tol {
        return Err(Error::IncompatibleData {
            defect: defect.abs(),
            cap: 10.0 * tol,
        });
    }
    if defect.abs() > tol {
        log::warn!("flux compatibility defect {defect:.3e} above tolerance {tol:.3e}");
    } else {
        log::debug!("flux compatibility defect {defect:.3e} repaired uniformly");
    }
    let boundary_measure = if dim == 1 { 2.0 } else { TAU * grid.ball.radius };
    let shift = defect / boundary_measure;

    let (big_phi, big_grad) = if dim == 1 {
        solve_line(&grid, &gv, [flux.values[0] - shift, flux.values[1] - shift])
    } else {
        let q = boundary_modes(flux, grid.n_theta, shift);
        solve_disk(&grid, &gv, &q, opts.stencil)
    };

    let d = dim as f64;
    let mut phi = Vec::with_capacity(grid.len());
    let mut grad = Vec::with_capacity(grid.len());
    let mut pts = Vec::with_capacity(grid.len());
    let mut wts = Vec::new();
    let mut vals = Vec::new();
    let r_fit = opts.fit_fraction * grid.ball.radius;
    for i in 0..grid.n_r {
        for j in 0..grid.n_theta {
            let k = i * grid.n_theta + j;
            let o = grid.offset(i, j);
            let v = big_phi[k] - c / (2.0 * d) * (o[0] * o[0] + o[1] * o[1]);
            phi.push(v);
            grad.push([big_grad[k][0] - c / d * o[0], big_grad[k][1] - c / d * o[1]]);
            if grid.r(i) <= r_fit {
                pts.push(o);
                wts.push(grid.weight(i));
                vals.push(v);
            }
        }
    }
    let (jet_b, jet_a) = fit_harmonic_jet(dim, &pts, &vals, &wts, r_fit)?;
    let laplace_defect = laplace_residual(&grid, &phi, opts.stencil, c, &gv);
    Ok(HarmonicPotential {
        grid,
        big_phi,
        c,
        phi,
        grad,
        jet_b,
        jet_a,
        compat_defect: defect,
        laplace_defect,
    })
}

fn sample_source(grid: &PolarGrid, g: Source<'_>) -> Result<Vec<f64>> {
    match g {
        Source::Constant(c) => Ok(vec![c; grid.len()]),
        Source::Field(f) => {
            let mut out = Vec::with_capacity(grid.len());
            for i in 0..grid.n_r {
                for j in 0..grid.n_theta {
                    let p = grid.node(i, j);
                    out.push(f.sample(&p).ok_or_else(|| {
                        Error::DomainExceeded(format!("source field does not cover node {p:?}"))
                    })?);
                }
            }
            Ok(out)
        }
    }
}

/// Fourier modes of the boundary datum on `n_theta` nodes. Bin values are
/// arc averages, so each resolved mode is divided by the averaging symbol.
fn boundary_modes(flux: &BoundaryFlux, n_theta: usize, shift: f64) -> Vec<Complex64> {
    let nb = flux.values.len();
    let w = TAU / nb as f64;
    let mut q = vec![Complex64::new(0.0, 0.0); n_theta];
    let kmax = (nb / 2).min(n_theta / 2);
    for (slot, m) in signed_modes(n_theta).enumerate() {
        if m.unsigned_abs() as usize >= kmax && m != 0 {
            continue;
        }
        let mut s = Complex64::new(0.0, 0.0);
        for (k, v) in flux.values.iter().enumerate() {
            let t = (k as f64 + 0.5) * w;
            s += (v - shift) * Complex64::from_polar(1.0, -(m as f64) * t);
        }
        s /= nb as f64;
        let x = 0.5 * m as f64 * w;
        if m != 0 {
            s /= x.sin() / x;
        }
        q[slot] = s;
    }
    q
}

/// Signed frequency of each FFT slot.
fn signed_modes(n: usize) -> impl Iterator<Item = i64> {
    (0..n).map(move |k| {
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    })
}

fn symbol(m: i64, n_theta: usize, stencil: AngularStencil) -> f64 {
    let mf = m as f64;
    match stencil {
        AngularStencil::Spectral => mf * mf,
        AngularStencil::FivePoint => {
            let dt = TAU / n_theta as f64;
            (2.0 - 2.0 * (mf * dt).cos()) / (dt * dt)
        }
    }
}

type Solution = (Vec<f64>, Vec<Point>);

fn solve_disk(
    grid: &PolarGrid,
    gv: &[f64],
    q: &[Complex64],
    stencil: AngularStencil,
) -> Solution {
    let (nr, nt) = (grid.n_r, grid.n_theta);
    let dr = grid.dr();
    let big_r = grid.ball.radius;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);

    // ghat[i][m]
    let mut ghat = vec![Complex64::new(0.0, 0.0); nr * nt];
    for i in 0..nr {
        let row = &mut ghat[i * nt..(i + 1) * nt];
        for j in 0..nt {
            row[j] = Complex64::new(gv[i * nt + j], 0.0);
        }
        fwd.process(row);
        for v in row.iter_mut() {
            *v /= nt as f64;
        }
    }
    let face = |i: usize| i as f64 * dr; // r_{i-1/2}
    let mut uhat = vec![Complex64::new(0.0, 0.0); nr * nt];
    let mut col = vec![Complex64::new(0.0, 0.0); nr];
    let mut rhs = vec![Complex64::new(0.0, 0.0); nr];
    let mut cp = vec![0.0; nr];
    for (slot, m) in signed_modes(nt).enumerate() {
        for i in 0..nr {
            rhs[i] = grid.r(i) * dr * dr * ghat[i * nt + slot];
        }
        rhs[nr - 1] -= big_r * dr * q[slot];
        if m == 0 {
            // r_{i+1/2} (u_{i+1} - u_i) = r_{i-1/2} (u_i - u_{i-1}) + rhs_i
            col[0] = Complex64::new(0.0, 0.0);
            let mut f = Complex64::new(0.0, 0.0);
            for i in 0..nr - 1 {
                f += grid.r(i) * dr * dr * ghat[i * nt];
                col[i + 1] = col[i] + f / face(i + 1);
            }
        } else {
            let lam = symbol(m, nt, stencil) * dr * dr;
            // Thomas algorithm on a_i u_{i-1} + b_i u_i + c_i u_{i+1} = rhs_i
            let coef = |i: usize| {
                let a = face(i);
                let c = if i + 1 < nr { face(i + 1) } else { 0.0 };
                let b = -(a + c) - lam / grid.r(i);
                (a, b, c)
            };
            let (_, b0, c0) = coef(0);
            cp[0] = c0 / b0;
            col[0] = rhs[0] / b0;
            for i in 1..nr {
                let (a, b, c) = coef(i);
                let den = b - a * cp[i - 1];
                cp[i] = c / den;
                col[i] = (rhs[i] - a * col[i - 1]) / den;
            }
            for i in (0..nr - 1).rev() {
                let next = col[i + 1];
                col[i] -= cp[i] * next;
            }
        }
        for i in 0..nr {
            uhat[i * nt + slot] = col[i];
        }
    }

    // radial and angular derivatives per mode
    let mut dr_hat = vec![Complex64::new(0.0, 0.0); nr * nt];
    let mut dt_hat = vec![Complex64::new(0.0, 0.0); nr * nt];
    for (slot, m) in signed_modes(nt).enumerate() {
        let u = |i: usize| uhat[i * nt + slot];
        let parity = if m % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..nr {
            let d = if nr == 1 {
                q[slot]
            } else if i == 0 {
                // ghost value at r = -r_0 is the same ring half a turn away
                (u(1) - parity * u(0)) / (2.0 * dr)
            } else if i + 1 < nr {
                (u(i + 1) - u(i - 1)) / (2.0 * dr)
            } else {
                // quadratic through the last two rings with slope q at R
                let gam = (q[slot] * dr - (u(i) - u(i - 1))) / (2.0 * dr * dr);
                q[slot] - gam * dr
            };
            dr_hat[i * nt + slot] = d;
            let mf = if 2 * slot == nt { 0.0 } else { m as f64 };
            dt_hat[i * nt + slot] = Complex64::new(0.0, mf) * u(i);
        }
    }
    let mut big_phi = vec![0.0; nr * nt];
    let mut grad = vec![[0.0, 0.0]; nr * nt];
    let mut buf = vec![Complex64::new(0.0, 0.0); nt];
    let mut bufr = vec![Complex64::new(0.0, 0.0); nt];
    let mut buft = vec![Complex64::new(0.0, 0.0); nt];
    for i in 0..nr {
        buf.copy_from_slice(&uhat[i * nt..(i + 1) * nt]);
        bufr.copy_from_slice(&dr_hat[i * nt..(i + 1) * nt]);
        buft.copy_from_slice(&dt_hat[i * nt..(i + 1) * nt]);
        inv.process(&mut buf);
        inv.process(&mut bufr);
        inv.process(&mut buft);
        let r = grid.r(i);
        for j in 0..nt {
            let th = grid.theta(j);
            let (s, c) = th.sin_cos();
            big_phi[i * nt + j] = buf[j].re;
            let ur = bufr[j].re;
            let ut = buft[j].re / r;
            grad[i * nt + j] = [c * ur - s * ut, s * ur + c * ut];
        }
    }
    normalize_mean(grid, &mut big_phi);
    (big_phi, grad)
}

/// One-dimensional problem on `[-R, R]` with outward fluxes `[left, right]`.
fn solve_line(grid: &PolarGrid, gv: &[f64], q: [f64; 2]) -> Solution {
    let n = grid.n_r;
    let dx = grid.dr();
    // line index k runs left to right over 2n cells; node (i, j) of the
    // layout is the right (j = 0) or left (j = 1) half-line
    let line_g = |k: usize| -> f64 {
        if k < n {
            gv[(n - 1 - k) * 2 + 1]
        } else {
            gv[(k - n) * 2]
        }
    };
    let mut u = vec![0.0; 2 * n];
    let mut faces = vec![0.0; 2 * n + 1];
    faces[0] = -q[0];
    for k in 0..2 * n {
        faces[k + 1] = faces[k] + dx * line_g(k);
    }
    for k in 1..2 * n {
        u[k] = u[k - 1] + dx * faces[k];
    }
    let mut big_phi = vec![0.0; 2 * n];
    let mut grad = vec![[0.0, 0.0]; 2 * n];
    for k in 0..2 * n {
        let slot = if k < n { (n - 1 - k) * 2 + 1 } else { (k - n) * 2 };
        big_phi[slot] = u[k];
        grad[slot] = [0.5 * (faces[k] + faces[k + 1]), 0.0];
    }
    normalize_mean(grid, &mut big_phi);
    (big_phi, grad)
}

fn normalize_mean(grid: &PolarGrid, u: &mut [f64]) {
    let nt = grid.n_theta;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..grid.n_r {
        let w = grid.weight(i);
        num += w * u[i * nt..(i + 1) * nt].iter().sum::<f64>();
        den += w * nt as f64;
    }
    let mean = num / den;
    for v in u.iter_mut() {
        *v -= mean;
    }
}

/// Largest `|L_h phi|` over interior nodes, where `L_h` is the operator the
/// solver inverts. Since `L_h |x|^2 = 2d` exactly, this equals the solve
/// residual plus `|g - c|`.
fn laplace_residual(grid: &PolarGrid, phi: &[f64], stencil: AngularStencil, c: f64, gv: &[f64]) -> f64 {
    let (nr, nt) = (grid.n_r, grid.n_theta);
    let dr = grid.dr();
    if grid.dim == 1 {
        let n = nr;
        let at = |k: usize| {
            if k < n {
                phi[(n - 1 - k) * 2 + 1]
            } else {
                phi[(k - n) * 2]
            }
        };
        let mut worst: f64 = 0.0;
        for k in 1..2 * n - 1 {
            worst = worst.max(((at(k + 1) - 2.0 * at(k) + at(k - 1)) / (dr * dr)).abs());
        }
        return worst;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let mut hat = vec![Complex64::new(0.0, 0.0); nr * nt];
    for i in 0..nr {
        let row = &mut hat[i * nt..(i + 1) * nt];
        for j in 0..nt {
            row[j] = Complex64::new(phi[i * nt + j], 0.0);
        }
        fwd.process(row);
    }
    let mut worst: f64 = 0.0;
    let mut row = vec![Complex64::new(0.0, 0.0); nt];
    // interior rings only: the outer ring carries the Neumann datum
    for i in 0..nr - 1 {
        for (slot, m) in signed_modes(nt).enumerate() {
            let u = |k: usize| hat[k * nt + slot];
            let inner = if i == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                (i as f64 * dr) * (u(i) - u(i - 1))
            };
            let outer = ((i + 1) as f64 * dr) * (u(i + 1) - u(i));
            let r = grid.r(i);
            row[slot] = (outer - inner) / (r * dr * dr) - symbol(m, nt, stencil) / (r * r) * u(i);
        }
        inv.process(&mut row);
        for j in 0..nt {
            let l = row[j].re / nt as f64;
            // remove the source beyond its mean so that g = c gives the residual
            let excess = gv[i * nt + j] - c;
            worst = worst.max((l - excess).abs());
        }
    }
    worst
}
