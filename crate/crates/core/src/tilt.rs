//! Excess improvement by tilting: the affine frame built from the harmonic
//! jet, the change of variables, and one full step of the pipeline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excess::{excess_energy, hypothesis_quantity};
use crate::measures::{data_term, Ball, Grid, GridDensity};
use crate::numerics::{
    add, det, frobenius, inverse, mat_sub, mat_vec, norm, spectral_norm, sub, Mat2, Point, IDENTITY,
};
use crate::poisson::{
    compatibility_constant, solve_neumann, time_integrated_flux, FluxOptions, NeumannOptions,
    Source, R_NEUMANN,
};
use crate::transport::{monotone_tol, TransportMap};

/// Tolerance on `|det M - 1|`.
pub const DET_TOL: f64 = 1e-12;
/// Relative asymmetry accepted by [`sym_exp_neg_half`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric unit-determinant matrix `M` and shift `b`.
///
/// About a center `x0` the frame acts as `x = x0 + M (xh - x0)` on sources
/// and `yh = x0 + M (y - b - x0)` on targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltFrame {
    #[serde(rename = "M")]
    pub m: Mat2,
    pub b: Point,
}

impl TiltFrame {
    pub fn identity() -> Self {
        Self { m: IDENTITY, b: [0.0, 0.0] }
    }

    pub fn is_identity(&self) -> bool {
        self.m == IDENTITY && self.b == [0.0, 0.0]
    }

    /// `|M - Id|^2 + R^-2 |b|^2` with the Frobenius norm.
    pub fn norm_sq(&self, radius: f64, dim: usize) -> f64 {
        frobenius(&mat_sub(&self.m, &IDENTITY), dim).powi(2) + norm(&self.b).powi(2) / (radius * radius)
    }
}

/// Output of [`sym_exp_neg_half`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymExp {
    #[serde(rename = "M")]
    pub m: Mat2,
    /// `trace(A) / d`, subtracted from the diagonal before exponentiating.
    pub trace_correction: f64,
    pub det_defect: f64,
}

/// `exp(-A/2)` of a symmetric matrix after projecting out its trace.
///
/// For a trace-free symmetric 2x2 matrix `A^2 = lambda^2 Id`, so the
/// exponential is `cosh(lambda/2) Id - sinh(lambda/2)/lambda A` with
/// `+-lambda` the eigenvalues.
pub fn sym_exp_neg_half(a: &Mat2, dim: usize) -> Result<SymExp> {
    if dim == 1 {
        return Ok(SymExp { m: IDENTITY, trace_correction: a[0][0], det_defect: 0.0 });
    }
    let scale = frobenius(a, 2).max(1.0);
    let asymmetry = (a[0][1] - a[1][0]).abs();
    if !(asymmetry <= SYMMETRY_TOL * scale) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let tr = 0.5 * (a[0][0] + a[1][1]);
    if tr != 0.0 {
        log::debug!("trace projection removed {tr:.3e} from the jet Hessian");
    }
    let p = a[0][0] - tr;
    let e = 0.5 * (a[0][1] + a[1][0]);
    let lambda = p.hypot(e);
    let ch = (0.5 * lambda).cosh();
    // sinh(lambda/2)/lambda, by its series near 0
    let sh = if lambda < 1e-4 {
        0.5 + lambda * lambda / 48.0
    } else {
        (0.5 * lambda).sinh() / lambda
    };
    let m = [[ch - sh * p, -sh * e], [-sh * e, ch + sh * p]];
    Ok(SymExp { m, trace_correction: tr, det_defect: (det(&m, 2) - 1.0).abs() })
}

/// Where the tilted problem is written: output coordinates `z` relate to
/// tilted coordinates by `xh = x0 + scale (z - out_center)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub out_center: Point,
    pub scale: f64,
    pub grid: Grid,
}

impl View {
    /// Same coordinates and grid as the input.
    pub fn in_place(grid: Grid, center: Point) -> Self {
        Self { out_center: center, scale: 1.0, grid }
    }

    /// Rescale `B_r(x0)` to the unit ball at the origin on a fresh grid with
    /// `n` cells per axis over `[-half_width, half_width]^d`.
    pub fn zoom(dim: usize, r: f64, half_width: f64, n: usize) -> Result<Self> {
        Ok(Self { out_center: [0.0, 0.0], scale: r, grid: Grid::covering(dim, [0.0, 0.0], half_width, n)? })
    }
}

/// The transformed problem after [`apply_frame`], in output coordinates.
#[derive(Clone, Debug)]
pub struct TiltedProblem {
    pub rho0: Arc<GridDensity>,
    pub rho1: GridDensity,
    pub map: TransportMap,
    pub frame: TiltFrame,
    /// `B_{theta R}` in output coordinates.
    pub ball: Ball,
    pub view: View,
}

/// Apply `frame` about the center of `outer` (the ball `B_R`) and resample
/// onto `view`. `radius` is the tilted ball radius `theta R`.
///
/// `Th(xh) = M (T(M xh) - b)` is evaluated through the bilinear displacement
/// interpolation of `T`; both densities are sampled bilinearly.
pub fn apply_frame(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    frame: &TiltFrame,
    outer: &Ball,
    radius: f64,
    view: &View,
) -> Result<TiltedProblem> {
    let dim = rho0.dim();
    let grid = rho0.grid();
    if rho1.grid() != grid || t.source().grid() != grid {
        return Err(Error::InvalidInput("map and densities live on different grids".into()));
    }
    let x0 = outer.center;
    let m = frame.m;
    let m_inv = inverse(&m, dim).ok_or_else(|| Error::InvalidInput("singular frame matrix".into()))?;
    let ball = Ball::new(view.out_center, radius / view.scale)?;
    if view.grid == *grid && view.scale == 1.0 && view.out_center == x0 && frame.is_identity() {
        return Ok(TiltedProblem {
            rho0: t.source().clone(),
            rho1: rho1.clone(),
            map: t.clone(),
            frame: *frame,
            ball,
            view: view.clone(),
        });
    }
    // M B_{theta R} and M^-1 B_{theta R} + b must stay inside B_R and the data
    let slack = 1e-12 * outer.radius;
    let src_r = spectral_norm(&m, dim) * radius;
    let dst_r = spectral_norm(&m_inv, dim) * radius;
    if src_r > outer.radius + slack || dst_r + norm(&frame.b) > outer.radius + slack {
        return Err(Error::DomainExceeded(format!(
            "tilted ball of radius {radius:.4e} leaves B_R (source reach {src_r:.4e}, target reach {:.4e}, R = {:.4e})",
            dst_r + norm(&frame.b),
            outer.radius
        )));
    }
    if !grid.contains_ball(&Ball::new(x0, src_r)?) || !grid.contains_ball(&Ball::new(add(&x0, &frame.b), dst_r)?) {
        return Err(Error::DomainExceeded("pulled-back ball exits the data grid".into()));
    }
    let out = &view.grid;
    let to_hat = |z: &Point| add(&x0, &[view.scale * (z[0] - view.out_center[0]), view.scale * (z[1] - view.out_center[1])]);
    let to_out = |yh: &Point| {
        [
            view.out_center[0] + (yh[0] - x0[0]) / view.scale,
            view.out_center[1] + (yh[1] - x0[1]) / view.scale,
        ]
    };
    let n = out.len();
    let mut r0 = Vec::with_capacity(n);
    let mut r1 = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut defined = Vec::with_capacity(n);
    for z in out.centers() {
        let xh = to_hat(&z);
        let x = add(&x0, &mat_vec(&m, &sub(&xh, &x0)));
        let y = add(&add(&x0, &mat_vec(&m_inv, &sub(&xh, &x0))), &frame.b);
        let v0 = rho0.sample(&x);
        r0.push(v0);
        r1.push(rho1.sample(&y));
        match (v0 > 0.0).then(|| t.eval(&x)).flatten() {
            Some(tx) => {
                let yh = add(&x0, &mat_vec(&m, &sub(&sub(&tx, &frame.b), &x0)));
                targets.push(to_out(&yh));
                defined.push(true);
            }
            None => {
                targets.push(z);
                defined.push(false);
            }
        }
    }
    // zero-mass cells carry no image
    for (i, d) in defined.iter_mut().enumerate() {
        if r0[i] == 0.0 {
            *d = false;
        }
    }
    let rho0_hat = Arc::new(GridDensity::new(out.clone(), r0)?);
    let rho1_hat = GridDensity::new(out.clone(), r1)?;
    let map = TransportMap::new(rho0_hat.clone(), targets, defined, vec![0.0; n], None)?;
    Ok(TiltedProblem { rho0: rho0_hat, rho1: rho1_hat, map, frame: *frame, ball, view: view.clone() })
}

/// Knobs of [`tilt_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TiltConfig {
    pub theta: f64,
    pub beta: f64,
    /// Threshold on `E + D` at the input ball.
    pub eps_step: f64,
    /// Neumann radius as a fraction of the ball radius.
    pub r_neumann: f64,
    /// Rescale each tilted ball to the unit ball on a fresh grid.
    pub zoom: bool,
    pub zoom_half_width: f64,
    pub flux: FluxOptions,
    pub neumann: NeumannOptions,
    /// Sampled pairs for the monotonicity spot-check; 0 disables it.
    pub monotone_pairs: usize,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self {
            theta: 0.25,
            beta: 0.5,
            eps_step: 0.05,
            r_neumann: R_NEUMANN,
            zoom: true,
            zoom_half_width: 1.25,
            flux: FluxOptions::default(),
            neumann: NeumannOptions::default(),
            monotone_pairs: 20_000,
        }
    }
}

/// Everything measured by one [`tilt_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(rename = "E_in")]
    pub e_in: f64,
    #[serde(rename = "D_in")]
    pub d_in: f64,
    #[serde(rename = "E_out")]
    pub e_out: f64,
    #[serde(rename = "D_out")]
    pub d_out: f64,
    pub theta: f64,
    pub beta: f64,
    #[serde(rename = "M")]
    pub m: Mat2,
    pub b: Point,
    pub radius_in: f64,
    pub radius_out: f64,
    /// `|M - Id|^2 + R^-2 |b|^2`.
    pub frame_norm: f64,
    pub det_defect: f64,
    pub trace_correction: f64,
    /// Net flux minus the Neumann source total, before repair.
    pub flux_defect: f64,
    /// `rho0(B)` on the Neumann ball, the scale of `flux_defect`.
    pub flux_reference: f64,
    /// Compatibility constant on the Neumann ball.
    pub c: f64,
    /// Largest discrete Laplacian of `phi`.
    pub laplace_defect: f64,
    /// `(E_out - theta^{2 beta} E_in) / D_in`, the constant the data term
    /// has to absorb (`NaN` when `D_in = 0`).
    pub implied_c_theta: f64,
    /// Worst monotonicity inner product before and after the tilt.
    pub monotone_in: f64,
    pub monotone_out: f64,
}

/// One tilting step on `ball`: flux, Neumann solve, jet, frame, change of
/// variables, and the excess on `B_{theta R}`.
pub fn tilt_step(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    ball: &Ball,
    cfg: &TiltConfig,
) -> Result<(TiltedProblem, StepRecord)> {
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) || !(cfg.beta > 0.0 && cfg.beta < 1.0) {
        return Err(Error::Config(format!("theta {} and beta {} must lie in (0, 1)", cfg.theta, cfg.beta)));
    }
    let dim = rho0.dim();
    let input = hypothesis_quantity(t, rho0, rho1, ball)?;
    let eps = input.total();
    if !(eps <= cfg.eps_step) {
        return Err(Error::SmallnessViolated { quantity: "E + D", value: eps, threshold: cfg.eps_step });
    }
    let nb = Ball::new(ball.center, cfg.r_neumann * ball.radius)?;
    let flux = time_integrated_flux(t, rho0, &nb, &cfg.flux)?;
    let c = compatibility_constant(rho0, rho1, &nb)?;
    let potential = solve_neumann(Source::Constant(c), &flux, &cfg.neumann)?;
    let exp = sym_exp_neg_half(&potential.jet_a, dim)?;
    let frame = TiltFrame { m: exp.m, b: potential.jet_b };
    let radius = cfg.theta * ball.radius;
    let view = if cfg.zoom {
        View::zoom(dim, radius, cfg.zoom_half_width, rho0.grid().shape()[0])?
    } else {
        View::in_place(rho0.grid().clone(), ball.center)
    };
    let tilted = apply_frame(t, rho0, rho1, &frame, ball, radius, &view)?;
    let e_out = excess_energy(&tilted.map, &tilted.rho0, &tilted.ball)?;
    let d_out = data_term(&tilted.rho0, &tilted.rho1, &tilted.ball)?;
    let (monotone_in, monotone_out) = if cfg.monotone_pairs > 0 {
        let scale = spectral_norm(&frame.m, dim).powi(2);
        (
            t.monotonicity_violation(Some(cfg.monotone_pairs)) / monotone_tol(rho0.grid()),
            tilted.map.monotonicity_violation(Some(cfg.monotone_pairs))
                / (monotone_tol(tilted.rho0.grid()) * scale),
        )
    } else {
        (0.0, 0.0)
    };
    let record = StepRecord {
        e_in: input.excess,
        d_in: input.data,
        e_out,
        d_out,
        theta: cfg.theta,
        beta: cfg.beta,
        m: frame.m,
        b: frame.b,
        radius_in: ball.radius,
        radius_out: radius,
        frame_norm: frame.norm_sq(ball.radius, dim),
        det_defect: exp.det_defect,
        trace_correction: exp.trace_correction,
        flux_defect: potential.compat_defect,
        flux_reference: rho0.mass_in(&nb),
        c,
        laplace_defect: potential.laplace_defect,
        implied_c_theta: if input.data > 0.0 {
            (e_out - cfg.theta.powf(2.0 * cfg.beta) * input.excess) / input.data
        } else {
            f64::NAN
        },
        monotone_in,
        monotone_out,
    };
    log::info!(
        "tilt: E {:.3e} -> {:.3e}, D {:.3e} -> {:.3e}, |M - Id|^2 + |b|^2/R^2 = {:.3e}",
        record.e_in,
        record.e_out,
        record.d_in,
        record.d_out,
        record.frame_norm
    );
    Ok((tilted, record))
}
