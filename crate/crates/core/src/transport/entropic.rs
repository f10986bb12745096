//! Entropic transport by log-domain Sinkhorn iterations.
//!
//! The squared distance between two Cartesian grids splits into per-axis
//! terms, so every soft-min over target cells is computed as two nested
//! one-dimensional log-sum-exp reductions. Potentials are kept in the log
//! domain throughout, which keeps regularizations down to `1e-4 diam^2`
//! free of underflow. Regularization is reached by geometric annealing from
//! a coarse value, warm-starting each stage.

use std::sync::Arc;

use rayon::prelude::*;

use super::{PlanEntry, TransportPlan, ENTROPIC_MASS_TOL};
use crate::error::{Error, Result};
use crate::measures::{equalize_mass, Grid, GridDensity};

#[derive(Clone, Copy, Debug)]
pub struct EntropicOptions {
    /// Relative mass tolerance for the input marginals.
    pub mass_tol: f64,
    /// Plan entries below `truncation` times the largest entry of their row
    /// are dropped.
    pub truncation: f64,
    /// Annealing factor between successive regularization stages.
    pub anneal: f64,
    /// Iteration budget for each intermediate annealing stage.
    pub stage_iters: usize,
    /// Over-relaxation weight for the potential updates, in `[1, 2)`.
    pub relaxation: f64,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        Self {
            mass_tol: ENTROPIC_MASS_TOL,
            truncation: 1e-14,
            anneal: 0.5,
            stage_iters: 60,
            relaxation: 1.8,
        }
    }
}

/// Per-axis squared distances between source and target cell centers.
struct AxisCosts {
    /// `cx[i * ntx + j] = (xs_i - xt_j)^2`
    cx: Vec<f64>,
    cy: Vec<f64>,
    ns: [usize; 2],
    nt: [usize; 2],
}

impl AxisCosts {
    fn new(sg: &Grid, tg: &Grid) -> Self {
        let build = |axis: usize| {
            let a = sg.axis_centers(axis);
            let b = tg.axis_centers(axis);
            let mut c = Vec::with_capacity(a.len() * b.len());
            for x in &a {
                for y in &b {
                    c.push((x - y) * (x - y));
                }
            }
            c
        };
        Self {
            cx: build(0),
            cy: build(1),
            ns: sg.shape(),
            nt: tg.shape(),
        }
    }

    fn transposed(&self) -> Self {
        let tr = |c: &[f64], n: usize, m: usize| {
            let mut out = vec![0.0; c.len()];
            for i in 0..n {
                for j in 0..m {
                    out[j * n + i] = c[i * m + j];
                }
            }
            out
        };
        Self {
            cx: tr(&self.cx, self.ns[0], self.nt[0]),
            cy: tr(&self.cy, self.ns[1], self.nt[1]),
            ns: self.nt,
            nt: self.ns,
        }
    }

    /// `out_t = LSE_s [ h_s - C(s, t) / eps ]` for every target cell `t`.
    fn soft_min(&self, h: &[f64], eps: f64, out: &mut [f64], scratch: &mut Vec<f64>) {
        let [nsx, nsy] = self.ns;
        let [ntx, nty] = self.nt;
        let inv = 1.0 / eps;
        scratch.clear();
        scratch.resize(nsx * nty, 0.0);
        // reduce the source y axis: scratch[ix, jy]
        scratch.par_chunks_mut(nty).enumerate().for_each_init(
            || vec![0.0; nsy],
            |buf, (ix, row)| {
                for (jy, slot) in row.iter_mut().enumerate() {
                    let mut mx = f64::NEG_INFINITY;
                    for iy in 0..nsy {
                        let v = h[ix + nsx * iy] - self.cy[iy * nty + jy] * inv;
                        buf[iy] = v;
                        if v > mx {
                            mx = v;
                        }
                    }
                    *slot = finish_lse(buf, mx);
                }
            },
        );
        // reduce the source x axis
        let scratch = &*scratch;
        out.par_chunks_mut(ntx).enumerate().for_each_init(
            || vec![0.0; nsx],
            |buf, (jy, row)| {
                for (jx, slot) in row.iter_mut().enumerate() {
                    let mut mx = f64::NEG_INFINITY;
                    for ix in 0..nsx {
                        let v = scratch[ix * nty + jy] - self.cx[ix * ntx + jx] * inv;
                        buf[ix] = v;
                        if v > mx {
                            mx = v;
                        }
                    }
                    *slot = finish_lse(buf, mx);
                }
            },
        );
    }
}

#[inline]
fn finish_lse(vals: &[f64], mx: f64) -> f64 {
    if !mx.is_finite() {
        return mx;
    }
    // terms below e^-50 of the maximum cannot change the sum in f64
    let mut s = 0.0;
    for v in vals {
        let d = v - mx;
        if d > -50.0 {
            s += d.exp();
        }
    }
    mx + s.ln()
}

fn log_masses(rho: &GridDensity) -> Vec<f64> {
    rho.cell_masses()
        .iter()
        .map(|&m| if m > 0.0 { m.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Entropy-regularized transport with regularization `reg` (units of
/// length squared). Stops when the L1 marginal defect is at most
/// `tol * mass`.
pub fn solve_entropic(
    rho0: &GridDensity,
    rho1: &GridDensity,
    reg: f64,
    max_iter: usize,
    tol: f64,
    opts: &EntropicOptions,
) -> Result<TransportPlan> {
    if !(reg > 0.0) || !reg.is_finite() {
        return Err(Error::InvalidInput(format!(
            "regularization must be positive, got {reg}"
        )));
    }
    if rho0.dim() != rho1.dim() {
        return Err(Error::InvalidInput("marginals differ in dimension".into()));
    }
    let (rho1, _) = equalize_mass(rho0, rho1, opts.mass_tol)?;
    let sg = rho0.grid();
    let tg = rho1.grid();
    let fwd = AxisCosts::new(sg, tg);
    let bwd = fwd.transposed();
    let la = log_masses(rho0);
    let lb = log_masses(&rho1);
    let mass = rho0.mass();
    let a = rho0.cell_masses();

    let diam = sg.diameter().max(tg.diameter());
    let mut eps = (0.25 * diam * diam).max(reg);
    let mut f = vec![0.0; sg.len()];
    let mut g = vec![0.0; tg.len()];
    let mut g_new = vec![0.0; tg.len()];
    let mut hs = vec![0.0; sg.len()];
    let mut ht = vec![0.0; tg.len()];
    let mut lse_s = vec![0.0; sg.len()];
    let mut scratch = Vec::new();
    let mut iters = 0usize;
    let mut defect;

    loop {
        let last_stage = eps <= reg;
        let stage_cap = if last_stage { usize::MAX } else { opts.stage_iters };
        let stage_tol = if last_stage { tol } else { tol.max(1e-3) };
        let mut stage_iter = 0;
        let mut w = if last_stage { opts.relaxation } else { 1.0 };
        let mut best = f64::INFINITY;
        let mut best_at = 0;
        loop {
            // g update: columns become exact
            for i in 0..hs.len() {
                hs[i] = f[i] / eps + la[i];
            }
            fwd.soft_min(&hs, eps, &mut g_new, &mut scratch);
            for j in 0..g.len() {
                g_new[j] = if lb[j].is_finite() {
                    (1.0 - w) * g[j] - w * eps * g_new[j]
                } else {
                    0.0
                };
            }
            std::mem::swap(&mut g, &mut g_new);
            // row marginals of (f, g): a_i exp(f_i/eps + LSE_j[...])
            for j in 0..ht.len() {
                ht[j] = g[j] / eps + lb[j];
            }
            bwd.soft_min(&ht, eps, &mut lse_s, &mut scratch);
            let mut d = 0.0;
            for i in 0..f.len() {
                if a[i] > 0.0 {
                    d += (a[i] * (f[i] / eps + lse_s[i]).exp() - a[i]).abs();
                }
            }
            defect = d / mass;
            if defect < best {
                best = defect;
                best_at = stage_iter;
            } else if w != 1.0 && (stage_iter - best_at > 200 || !defect.is_finite()) {
                log::debug!("over-relaxation stalled at defect {defect:.3e}, falling back");
                w = 1.0;
            }
            iters += 1;
            stage_iter += 1;
            if last_stage && defect <= stage_tol {
                break;
            }
            if iters >= max_iter {
                return Err(Error::ConvergenceFailure {
                    iterations: iters,
                    defect,
                });
            }
            if defect <= stage_tol || stage_iter >= stage_cap {
                break;
            }
            for i in 0..f.len() {
                f[i] = if la[i].is_finite() {
                    (1.0 - w) * f[i] - w * eps * lse_s[i]
                } else {
                    0.0
                };
            }
        }
        log::debug!("stage eps {eps:.3e}: {stage_iter} iterations, defect {defect:.3e}");
        if last_stage {
            break;
        }
        // warm start the next stage from the current potentials
        for i in 0..f.len() {
            f[i] = if la[i].is_finite() { -eps * lse_s[i] } else { 0.0 };
        }
        eps = (eps * opts.anneal).max(reg);
    }
    log::debug!("sinkhorn: {iters} iterations, final defect {defect:.3e}, reg {reg:.3e}");

    let entries = materialize(sg, tg, &f, &g, &la, &lb, eps, opts.truncation);
    Ok(TransportPlan::new(
        Arc::new(rho0.clone()),
        Arc::new(rho1),
        entries,
        Some(reg),
        Some(f),
    ))
}

/// Enumerate plan entries row by row. Each row is scanned in square rings
/// around its most likely target until a whole ring falls below the
/// truncation level, after a minimum radius covering the Gaussian kernel.
#[allow(clippy::too_many_arguments)]
fn materialize(
    sg: &Grid,
    tg: &Grid,
    f: &[f64],
    g: &[f64],
    la: &[f64],
    lb: &[f64],
    eps: f64,
    truncation: f64,
) -> Vec<PlanEntry> {
    let [ntx, nty] = tg.shape();
    let ht = tg.spacing();
    let cut = truncation.ln();
    let min_ring = ((-cut * eps).sqrt() / ht).ceil() as isize + 1;
    let mut entries = Vec::new();
    let mut row: Vec<(usize, f64)> = Vec::new();
    let to = tg.origin();
    let g_lb: Vec<f64> = (0..tg.len()).map(|j| g[j] / eps + lb[j]).collect();
    for i in 0..sg.len() {
        if !la[i].is_finite() {
            continue;
        }
        let x = sg.center(i);
        let weight = |j: usize| -> f64 {
            let y = tg.center(j);
            let c = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            f[i] / eps + g_lb[j] - c / eps + la[i]
        };
        // seed: best target along a coarse scan of the x and y axes through x
        let cx = (((x[0] - to[0]) / ht - 0.5).round() as isize).clamp(0, ntx as isize - 1);
        let cy = if tg.dim() == 1 {
            0
        } else {
            (((x[1] - to[1]) / ht - 0.5).round() as isize).clamp(0, nty as isize - 1)
        };
        let (cx, cy) = seek_mode(cx, cy, ntx, nty, |ix, iy| weight(tg.index(ix, iy)));
        row.clear();
        let mut row_max = f64::NEG_INFINITY;
        let mut ring = 0isize;
        loop {
            let mut ring_max = f64::NEG_INFINITY;
            let mut any_cell = false;
            for (ix, iy) in ring_cells(cx, cy, ring, ntx, nty) {
                any_cell = true;
                let j = tg.index(ix, iy);
                let w = weight(j);
                if w > ring_max {
                    ring_max = w;
                }
                if w.is_finite() {
                    row.push((j, w));
                }
            }
            if ring_max > row_max {
                row_max = ring_max;
            }
            if !any_cell || (ring >= min_ring && ring_max < row_max + cut) {
                break;
            }
            ring += 1;
        }
        for &(j, w) in &row {
            if w >= row_max + cut {
                entries.push(PlanEntry {
                    src: i,
                    dst: j,
                    mass: w.exp(),
                });
            }
        }
    }
    entries
}

/// Greedy hill climb on the log-weight over the 8-neighborhood.
fn seek_mode(
    mut cx: isize,
    mut cy: isize,
    nx: usize,
    ny: usize,
    w: impl Fn(usize, usize) -> f64,
) -> (isize, isize) {
    let mut best = w(cx as usize, cy as usize);
    loop {
        let mut moved = false;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let ix = cx + dx;
                let iy = cy + dy;
                if ix < 0 || iy < 0 || ix >= nx as isize || iy >= ny as isize {
                    continue;
                }
                let v = w(ix as usize, iy as usize);
                if v > best {
                    best = v;
                    cx = ix;
                    cy = iy;
                    moved = true;
                }
            }
        }
        if !moved {
            return (cx, cy);
        }
    }
}

/// Cells on the boundary of the square of half-width `r` around `(cx, cy)`.
fn ring_cells(
    cx: isize,
    cy: isize,
    r: isize,
    nx: usize,
    ny: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (nx, ny) = (nx as isize, ny as isize);
    let ys: Vec<isize> = if ny == 1 { vec![0] } else { (cy - r..=cy + r).collect() };
    let one_d = ny == 1;
    ys.into_iter().flat_map(move |iy| {
        let edge_row = one_d || iy == cy - r || iy == cy + r;
        let xs: Vec<isize> = if edge_row && !one_d {
            (cx - r..=cx + r).collect()
        } else if one_d {
            if r == 0 {
                vec![cx]
            } else {
                vec![cx - r, cx + r]
            }
        } else {
            vec![cx - r, cx + r]
        };
        xs.into_iter().filter_map(move |ix| {
            (ix >= 0 && ix < nx && iy >= 0 && iy < ny).then_some((ix as usize, iy as usize))
        })
    })
}
