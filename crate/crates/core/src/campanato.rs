//! The iteration of tilting steps across scales, the bookkeeping of the
//! composed frames, and Campanato-type Hölder estimates.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excess::hypothesis_quantity;
use crate::measures::{Ball, GridDensity};
use crate::numerics::{
    add, dist2, fmt17, inverse, ls_slope, mat_mul, mat_vec, norm, pairwise_sum, scale, spectral_norm,
    Mat2, Point, IDENTITY,
};
use crate::tilt::{tilt_step, StepRecord, TiltConfig, TiltFrame};
use crate::transport::TransportMap;

/// Knobs of [`iterate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateConfig {
    pub tilt: TiltConfig,
    /// Number of tilting steps `K`.
    pub steps: usize,
    pub alpha: f64,
    /// Stop when `theta R` spans fewer than this many cells of the current grid.
    pub floor_cells: f64,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self { tilt: TiltConfig::default(), steps: 3, alpha: 0.5, floor_cells: 8.0 }
    }
}

/// Full record of an iteration.
///
/// Frames are stored in the original length units and act about `center`:
/// `T_k(x) = x0 + A_k (T(x0 + A_k^T (x - x0)) - x0) - d_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub k: usize,
    pub center: Point,
    pub radius: f64,
    pub dim: usize,
    pub theta: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Cell size of the original grid.
    pub spacing: f64,
    /// `E_0 + D_0`.
    pub eps: f64,
    pub frames: Vec<TiltFrame>,
    /// `A_0 = Id, A_1, ..., A_k`.
    pub composed_a: Vec<Mat2>,
    /// `d_0 = 0, d_1, ..., d_k`.
    pub composed_d: Vec<Point>,
    #[serde(rename = "E_trace")]
    pub e_trace: Vec<f64>,
    #[serde(rename = "D_trace")]
    pub d_trace: Vec<f64>,
    /// `theta^k R / h_0`: original cells per radius behind each level.
    pub info_ratio: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub early_stop_reason: Option<String>,
}

/// Run up to `cfg.steps` tilting steps starting from `ball`.
///
/// Step failures end the iteration with a recorded reason; only invalid
/// configuration and a failing initial excess are returned as errors.
pub fn iterate(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    ball: &Ball,
    cfg: &IterateConfig,
) -> Result<IterationState> {
    if cfg.steps == 0 {
        return Err(Error::Config("iteration needs K >= 1".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} must lie in (0, 1)", cfg.alpha)));
    }
    let tc = &cfg.tilt;
    if !(tc.theta > 0.0 && tc.theta < 1.0) || !(tc.beta > 0.0 && tc.beta < 1.0) {
        return Err(Error::Config(format!("theta {} and beta {} must lie in (0, 1)", tc.theta, tc.beta)));
    }
    let dim = rho0.dim();
    let h0 = rho0.grid().spacing();
    let start = hypothesis_quantity(t, rho0, rho1, ball)?;
    let mut state = IterationState {
        k: 0,
        center: ball.center,
        radius: ball.radius,
        dim,
        theta: tc.theta,
        beta: tc.beta,
        alpha: cfg.alpha,
        spacing: h0,
        eps: start.total(),
        frames: Vec::new(),
        composed_a: vec![IDENTITY],
        composed_d: vec![[0.0, 0.0]],
        e_trace: vec![start.excess],
        d_trace: vec![start.data],
        info_ratio: vec![ball.radius / h0],
        steps: Vec::new(),
        early_stop_reason: None,
    };
    if !(state.eps <= tc.eps_step) {
        state.early_stop_reason =
            Some(format!("E + D = {:.4e} exceeds the step threshold {:.4e}", state.eps, tc.eps_step));
        return Ok(state);
    }
    let mut map = t.clone();
    let mut r0: Arc<GridDensity> = Arc::new(rho0.clone());
    let mut r1 = rho1.clone();
    let mut cur = *ball;
    // physical length of one unit of the current coordinates
    let mut unit = 1.0;
    for k in 0..cfg.steps {
        let h = r0.grid().spacing();
        if tc.theta * cur.radius < cfg.floor_cells * h {
            state.early_stop_reason = Some(format!(
                "radius floor: theta R = {:.4e} below {} cells of size {h:.4e}",
                tc.theta * cur.radius,
                cfg.floor_cells
            ));
            break;
        }
        let (tilted, rec) = match tilt_step(&map, &r0, &r1, &cur, tc) {
            Ok(x) => x,
            Err(e) => {
                state.early_stop_reason = Some(format!("step {}: {e}", k + 1));
                break;
            }
        };
        let frame = TiltFrame { m: rec.m, b: scale(&rec.b, unit) };
        let a = mat_mul(&frame.m, &state.composed_a[k]);
        let d = mat_vec(&frame.m, &add(&state.composed_d[k], &frame.b));
        state.frames.push(frame);
        state.composed_a.push(a);
        state.composed_d.push(d);
        state.e_trace.push(rec.e_out);
        state.d_trace.push(rec.d_out);
        state.info_ratio.push(ball.radius * tc.theta.powi(k as i32 + 1) / h0);
        state.steps.push(rec);
        state.k = k + 1;
        unit *= tilted.view.scale;
        cur = tilted.ball;
        map = tilted.map;
        r0 = tilted.rho0;
        r1 = tilted.rho1;
    }
    Ok(state)
}

/// Checks of the iteration bounds with measured constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    /// `-slope` of `ln E_k` against `k`.
    pub decay_exponent: f64,
    /// `2 beta ln(1/theta)`.
    pub target_exponent: f64,
    /// `max_k (E_{k+1} - theta^{2 beta} E_k)_+ / D_k`.
    pub c_theta: f64,
    /// `c_theta / (1 - theta^{2 beta})`.
    pub c_sigma: f64,
    /// `E_k <= theta^{2 k beta} E_0 + c_sigma eps` for all `k`.
    pub excess_bound_holds: bool,
    /// Smallest `C` with `max(|A_k|, |A_k^-1|) <= (1 + C sqrt(eps))^k`.
    pub c_frames: f64,
    /// `max_k |b_k|^2 / (theta^{2k} eps R^2)`.
    pub c_shift: f64,
    /// Largest gap between incremental and recomputed `A_k`, `d_k`.
    pub recomposition_defect: f64,
    /// `B_{(theta/(1+C sqrt eps))^k R/2}` inside `A_k^T B_{theta^k R}` for all `k`.
    pub containment_holds: bool,
    /// `1 + C sqrt(eps) <= theta^{-2(1-alpha)/(d+2(1+alpha))}`.
    pub exponent_condition_holds: bool,
    pub early_stop_reason: Option<String>,
}

impl IterationState {
    /// `A_k`, `d_k` recomputed from the frames.
    pub fn recompose(&self, k: usize) -> (Mat2, Point) {
        let mut a = IDENTITY;
        let mut d = [0.0, 0.0];
        for f in &self.frames[..k] {
            a = mat_mul(&f.m, &a);
            d = mat_vec(&f.m, &add(&d, &f.b));
        }
        (a, d)
    }

    /// Smallest `C` with `max(|A_k|, |A_k^-1|) <= (1 + C sqrt(eps))^k`.
    pub fn frame_constant(&self) -> f64 {
        let se = self.eps.sqrt();
        let mut c: f64 = 0.0;
        for (k, a) in self.composed_a.iter().enumerate().skip(1) {
            let g = growth(a, self.dim);
            if se > 0.0 {
                c = c.max((g.powf(1.0 / k as f64) - 1.0) / se);
            } else if g > 1.0 {
                c = f64::INFINITY;
            }
        }
        c
    }

    pub fn summary(&self) -> IterationSummary {
        let t2b = self.theta.powf(2.0 * self.beta);
        let (ks, logs): (Vec<f64>, Vec<f64>) = self
            .e_trace
            .iter()
            .enumerate()
            .filter(|(_, e)| **e > 0.0)
            .map(|(k, e)| (k as f64, e.ln()))
            .unzip();
        let decay_exponent = if ks.len() >= 2 { -ls_slope(&ks, &logs) } else { f64::NAN };
        let mut c_theta: f64 = 0.0;
        for k in 0..self.k {
            let excess = self.e_trace[k + 1] - t2b * self.e_trace[k];
            if excess > 0.0 {
                c_theta = if self.d_trace[k] > 0.0 { c_theta.max(excess / self.d_trace[k]) } else { f64::INFINITY };
            }
        }
        let c_sigma = c_theta / (1.0 - t2b);
        let excess_bound_holds = self
            .e_trace
            .iter()
            .enumerate()
            .all(|(k, e)| *e <= t2b.powi(k as i32) * self.e_trace[0] + c_sigma * self.eps * (1.0 + 1e-12));
        let c_frames = self.frame_constant();
        let se = self.eps.sqrt();
        let mut c_shift: f64 = 0.0;
        for (k, f) in self.frames.iter().enumerate() {
            let denom = self.theta.powi(2 * (k as i32 + 1)) * self.eps * self.radius * self.radius;
            if denom > 0.0 {
                c_shift = c_shift.max(norm(&f.b).powi(2) / denom);
            }
        }
        let mut recomposition_defect: f64 = 0.0;
        let mut containment_holds = true;
        for k in 0..=self.k {
            let (a, d) = self.recompose(k);
            for i in 0..2 {
                recomposition_defect = recomposition_defect
                    .max((d[i] - self.composed_d[k][i]).abs())
                    .max((a[i][0] - self.composed_a[k][i][0]).abs())
                    .max((a[i][1] - self.composed_a[k][i][1]).abs());
            }
            let inner = (self.theta / (1.0 + c_frames * se)).powi(k as i32) * self.radius / 2.0;
            let sigma_min = inverse(&self.composed_a[k], self.dim)
                .map(|ai| 1.0 / spectral_norm(&ai, self.dim))
                .unwrap_or(0.0);
            if inner > sigma_min * self.theta.powi(k as i32) * self.radius * (1.0 + 1e-12) {
                containment_holds = false;
            }
        }
        let d = self.dim as f64;
        let exponent_condition_holds = 1.0 + c_frames * se
            <= self.theta.powf(-2.0 * (1.0 - self.alpha) / (d + 2.0 * (1.0 + self.alpha)));
        IterationSummary {
            decay_exponent,
            target_exponent: 2.0 * self.beta * (1.0 / self.theta).ln(),
            c_theta,
            c_sigma,
            excess_bound_holds,
            c_frames,
            c_shift,
            recomposition_defect,
            containment_holds,
            exponent_condition_holds,
            early_stop_reason: self.early_stop_reason.clone(),
        }
    }

    /// CSV `k,E_k,D_k,normM,normb,normA,normAinv` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,E_k,D_k,normM,normb,normA,normAinv\n");
        for k in 0..=self.k {
            let (nm, nb) = if k == 0 {
                (1.0, 0.0)
            } else {
                (spectral_norm(&self.frames[k - 1].m, self.dim), norm(&self.frames[k - 1].b))
            };
            let a = &self.composed_a[k];
            let ai = inverse(a, self.dim).map_or(f64::INFINITY, |m| spectral_norm(&m, self.dim));
            let _ = writeln!(
                out,
                "{k},{},{},{},{},{},{}",
                fmt17(self.e_trace[k]),
                fmt17(self.d_trace[k]),
                fmt17(nm),
                fmt17(nb),
                fmt17(spectral_norm(a, self.dim)),
                fmt17(ai)
            );
        }
        out
    }
}

fn growth(a: &Mat2, dim: usize) -> f64 {
    let inv = inverse(a, dim).map_or(f64::INFINITY, |m| spectral_norm(&m, dim));
    spectral_norm(a, dim).max(inv)
}

/// Mean of `|T - b|^2` over the defined cells of `ball`, with `b` the mean
/// of `T` there (or `fixed` when given). Returns `(value, cell count)`.
fn ball_variance(t: &TransportMap, ball: &Ball, fixed: Option<Point>) -> (f64, usize) {
    let grid = t.source().grid();
    let ys: Vec<Point> = grid.cells_in(ball).into_iter().filter_map(|i| t.target(i)).collect();
    if ys.is_empty() {
        return (0.0, 0);
    }
    let n = ys.len() as f64;
    let b = fixed.unwrap_or_else(|| {
        let xs: Vec<f64> = ys.iter().map(|y| y[0]).collect();
        let yv: Vec<f64> = ys.iter().map(|y| y[1]).collect();
        [pairwise_sum(&xs) / n, pairwise_sum(&yv) / n]
    });
    let terms: Vec<f64> = ys.iter().map(|y| dist2(y, &b)).collect();
    (pairwise_sum(&terms) / n, ys.len())
}

/// One radius level of [`campanato_seminorm`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormLevel {
    pub r: f64,
    /// `sup_x0 r^{-2 alpha} min_b mean_{B_r(x0)} |T - b|^2`.
    pub value: f64,
    pub argmax: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seminorm {
    pub alpha: f64,
    pub value: f64,
    pub levels: Vec<SeminormLevel>,
}

impl Seminorm {
    /// Ratios of consecutive level values, finest last.
    pub fn growth(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[1].value / w[0].value).collect()
    }
}

/// Campanato seminorm of `T` over the centers of `domain` and the dyadic
/// radii `R/2, R/4, ...` down to `r_min`. Centers at each level lie on a
/// lattice of spacing `r/2` inside the domain.
pub fn campanato_seminorm(t: &TransportMap, domain: &Ball, alpha: f64, r_min: f64) -> Result<Seminorm> {
    let grid = t.source().grid();
    let dim = grid.dim();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if !(r_min >= 2.0 * grid.spacing()) {
        return Err(Error::InvalidInput(format!(
            "r_min {r_min:.4e} below two cells ({:.4e})",
            2.0 * grid.spacing()
        )));
    }
    if !grid.contains_ball(&domain.scaled(1.5)) {
        return Err(Error::DomainExceeded("the grid must cover the domain dilated by 3/2".into()));
    }
    let mut levels = Vec::new();
    let mut r = domain.radius / 2.0;
    while r >= r_min * (1.0 - 1e-12) {
        let step = r / 2.0;
        let m = (domain.radius / step).floor() as i64;
        let offsets: Vec<Point> = (-m..=m)
            .flat_map(|i| {
                let js: Vec<i64> = if dim == 1 { vec![0] } else { (-m..=m).collect() };
                js.into_iter().map(move |j| [i as f64 * step, j as f64 * step])
            })
            .filter(|o| o[0] * o[0] + o[1] * o[1] <= domain.radius * domain.radius)
            .collect();
        let weight = r.powf(-2.0 * alpha);
        let best = offsets
            .par_iter()
            .map(|o| {
                let c = add(&domain.center, o);
                let (v, n) = ball_variance(t, &Ball { center: c, radius: r }, None);
                (if n > 0 { v * weight } else { 0.0 }, c)
            })
            .reduce(
                || (f64::NEG_INFINITY, [0.0, 0.0]),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && (b.1[0], b.1[1]) < (a.1[0], a.1[1])) { b } else { a },
            );
        levels.push(SeminormLevel { r, value: best.0, argmax: best.1 });
        r /= 2.0;
    }
    if levels.is_empty() {
        return Err(Error::InvalidInput(format!("r_min {r_min:.4e} exceeds half the domain radius")));
    }
    let value = levels.iter().map(|l| l.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(Seminorm { alpha, value, levels })
}

/// Output of [`holder_estimate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    #[serde(rename = "alpha_hat")]
    pub alpha_hat: f64,
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Set when every residual vanishes; `alpha_hat` is then 1.
    pub exact_fit: bool,
}

/// Hölder exponent from the iteration trace: for each level `k` the mean
/// of `|T - x0 - A_k^-1 d_k|^2` over `B_{(theta/(1+C sqrt eps))^k R/2}` on
/// the original map, and half the log-log slope against the radius.
///
/// Levels whose radius falls below two cells are skipped.
pub fn holder_estimate(state: &IterationState, t: &TransportMap) -> Result<HolderEstimate> {
    let h = t.source().grid().spacing();
    let c = state.frame_constant();
    let q = state.theta / (1.0 + c * state.eps.sqrt());
    let mut radii = Vec::new();
    let mut residuals = Vec::new();
    for k in 0..=state.k {
        let r = q.powi(k as i32) * state.radius / 2.0;
        if r < 2.0 * h {
            continue;
        }
        let Some(a_inv) = inverse(&state.composed_a[k], state.dim) else { continue };
        let b = add(&state.center, &mat_vec(&a_inv, &state.composed_d[k]));
        let (v, n) = ball_variance(t, &Ball { center: state.center, radius: r }, Some(b));
        if n == 0 {
            continue;
        }
        radii.push(r);
        residuals.push(v);
    }
    if radii.len() < 3 {
        return Err(Error::InsufficientTrace { valid: radii.len(), needed: 3 });
    }
    if residuals.iter().all(|v| *v == 0.0) {
        return Ok(HolderEstimate { alpha_hat: 1.0, radii, residuals, exact_fit: true });
    }
    let (lr, lv): (Vec<f64>, Vec<f64>) =
        radii.iter().zip(&residuals).filter(|(_, v)| **v > 0.0).map(|(r, v)| (r.ln(), v.ln())).unzip();
    if lr.len() < 2 {
        return Err(Error::InsufficientTrace { valid: lr.len(), needed: 3 });
    }
    Ok(HolderEstimate { alpha_hat: 0.5 * ls_slope(&lr, &lv), radii, residuals, exact_fit: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid;

    fn unit(n: usize) -> Arc<GridDensity> {
        let g = Grid::covering(2, [0.0, 0.0], 1.25, n).unwrap();
        Arc::new(GridDensity::uniform(g, 1.0).unwrap())
    }

    #[test]
    fn identity_iteration_is_flat() {
        let rho = unit(96);
        let t = TransportMap::identity(rho.clone());
        let cfg = IterateConfig { steps: 4, ..Default::default() };
        let s = iterate(&t, &rho, &rho, &Ball::centered(1.0).unwrap(), &cfg).unwrap();
        assert_eq!(s.k, 4, "{:?}", s.early_stop_reason);
        assert!(s.e_trace.iter().all(|e| *e == 0.0));
        assert!(s.frames.iter().all(|f| f.norm_sq(1.0, 2) < 1e-24));
        let sum = s.summary();
        assert!(sum.recomposition_defect == 0.0 && sum.containment_holds);
    }

    #[test]
    fn radius_floor_stops_coarse_grids() {
        let rho = unit(32);
        let t = TransportMap::identity(rho.clone());
        let s = iterate(&t, &rho, &rho, &Ball::centered(1.0).unwrap(), &IterateConfig::default()).unwrap();
        assert_eq!(s.k, 0);
        assert!(s.early_stop_reason.unwrap().starts_with("radius floor"));
    }

    #[test]
    fn translation_frame_is_the_shift() {
        let rho = unit(96);
        let v = [0.02, -0.01];
        let t = TransportMap::from_fn(rho.clone(), |x| add(&x, &v));
        let s = iterate(&t, &rho, &rho, &Ball::centered(1.0).unwrap(), &IterateConfig::default()).unwrap();
        assert!(s.k >= 1, "{:?}", s.early_stop_reason);
        let d1 = s.composed_d[1];
        assert!((d1[0] - v[0]).abs() < 1e-4 && (d1[1] - v[1]).abs() < 1e-4, "{d1:?}");
        assert!(s.e_trace[1] < 1e-8);
    }

    #[test]
    fn seminorm_of_identity_and_shift() {
        let rho = unit(160);
        let alpha = 0.5;
        let domain = Ball::centered(0.8).unwrap();
        let id = campanato_seminorm(&TransportMap::identity(rho.clone()), &domain, alpha, 0.1).unwrap();
        // (R/2)^{2 - 2 alpha} d/(d+2) at the top level
        let exact = 0.4f64.powf(2.0 - 2.0 * alpha) * 0.5;
        assert!((id.value - exact).abs() < 0.05 * exact, "{} vs {exact}", id.value);
        let shift = TransportMap::from_fn(rho, |x| [x[0] + 0.3, x[1] - 0.1]);
        let sh = campanato_seminorm(&shift, &domain, alpha, 0.1).unwrap();
        assert!((sh.value - id.value).abs() < 1e-12 * id.value);
    }

    #[test]
    fn seminorm_diverges_across_a_jump() {
        let rho = unit(160);
        let t = TransportMap::from_fn(rho, |x| if x[0] < 0.013 { x } else { [x[0] + 1.0, x[1]] });
        // a jump of size 1 keeps the mean square near 1/4, so each halving
        // multiplies the level value by 2^{2 alpha}
        let s = campanato_seminorm(&t, &Ball::centered(0.8).unwrap(), 0.75, 0.05).unwrap();
        for g in s.growth() {
            assert!(g > 1.9, "{:?}", s.growth());
        }
    }

    #[test]
    fn seminorm_preconditions() {
        let rho = unit(40);
        let t = TransportMap::identity(rho);
        let d = Ball::centered(0.8).unwrap();
        assert!(matches!(campanato_seminorm(&t, &d, 0.5, 0.01), Err(Error::InvalidInput(_))));
        assert!(matches!(
            campanato_seminorm(&t, &Ball::centered(1.0).unwrap(), 0.5, 0.2),
            Err(Error::DomainExceeded(_))
        ));
    }

    #[test]
    fn holder_needs_three_levels() {
        let rho = unit(96);
        let t = TransportMap::identity(rho.clone());
        let cfg = IterateConfig { steps: 1, ..Default::default() };
        let s = iterate(&t, &rho, &rho, &Ball::centered(1.0).unwrap(), &cfg).unwrap();
        assert!(matches!(holder_estimate(&s, &t), Err(Error::InsufficientTrace { .. })));
    }

    #[test]
    fn holder_of_identity_is_lipschitz() {
        let rho = unit(160);
        let t = TransportMap::identity(rho.clone());
        let cfg = IterateConfig { steps: 3, tilt: TiltConfig { theta: 0.5, ..Default::default() }, ..Default::default() };
        let s = iterate(&t, &rho, &rho, &Ball::centered(1.0).unwrap(), &cfg).unwrap();
        let h = holder_estimate(&s, &t).unwrap();
        assert!((h.alpha_hat - 1.0).abs() < 0.05, "{h:?}");
    }
}
