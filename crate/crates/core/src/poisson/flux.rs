use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Ball, GridDensity};
use crate::numerics::{fmt17, pairwise_sum, Point};
use crate::transport::TransportMap;

/// Signed, time-integrated mass flux through the boundary of a ball.
///
/// In two dimensions the boundary circle is cut into `n` equal arcs starting
/// at angle 0; in one dimension there are two bins, the left and the right
/// endpoint. Values are outward flux per unit boundary measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFlux {
    pub ball: Ball,
    pub dim: usize,
    pub values: Vec<f64>,
    /// `rho0(B)` of the source density, the scale for compatibility checks.
    pub reference_mass: f64,
    /// Crossings that were tangent to the sphere within tolerance.
    pub tangential: usize,
}

impl BoundaryFlux {
    /// Boundary measure of bin `k`.
    pub fn bin_measure(&self, _k: usize) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            self.ball.radius * TAU / self.values.len() as f64
        }
    }

    /// `(start, end)` angles of bin `k`. The one-dimensional endpoints sit
    /// at angles `pi` (left) and `0` (right).
    pub fn bin_angles(&self, k: usize) -> (f64, f64) {
        if self.dim == 1 {
            let a = if k == 0 { std::f64::consts::PI } else { 0.0 };
            return (a, a);
        }
        let w = TAU / self.values.len() as f64;
        (k as f64 * w, (k + 1) as f64 * w)
    }

    /// Total outward flux.
    pub fn net(&self) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.bin_measure(k))
            .collect();
        pairwise_sum(&terms)
    }

    /// Flux whose density is `q(theta)` averaged over each arc by Gauss
    /// quadrature. Used for manufactured Neumann data.
    pub fn from_density(ball: Ball, n_bins: usize, q: impl Fn(f64) -> f64) -> Self {
        // 8-point Gauss-Legendre on each arc
        const X: [f64; 4] = [
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        const W: [f64; 4] = [
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        let w = TAU / n_bins as f64;
        let values = (0..n_bins)
            .map(|k| {
                let mid = (k as f64 + 0.5) * w;
                let mut s = 0.0;
                for (x, wt) in X.iter().zip(W) {
                    s += wt * (q(mid + 0.5 * w * x) + q(mid - 0.5 * w * x));
                }
                0.5 * s
            })
            .collect();
        Self {
            ball,
            dim: 2,
            values,
            reference_mass: 0.0,
            tangential: 0,
        }
    }

    /// CSV `bin_angle_start,bin_angle_end,flux_density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_angle_start,bin_angle_end,flux_density\n");
        for (k, v) in self.values.iter().enumerate() {
            let (a, b) = self.bin_angles(k);
            let _ = writeln!(out, "{},{},{}", fmt17(a), fmt17(b), fmt17(*v));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluxOptions {
    pub n_bins: usize,
    /// Relative tolerance on the discriminant below which a crossing is
    /// treated as tangential.
    pub tangent_tol: f64,
    /// Sub-sampling of the source cells near the sphere; see [`Subsample`].
    pub subsample: Subsample,
}

impl Default for FluxOptions {
    fn default() -> Self {
        Self {
            n_bins: 64,
            tangent_tol: 1e-12,
            subsample: Subsample::Adaptive { per_displacement: 16.0, max: 128 },
        }
    }
}

/// How source cells near the sphere are split into sub-cells.
///
/// A sub-cell carries an equal share of the cell mass and is moved by the
/// bilinearly interpolated map. Crossing counts on the cell lattice are
/// quantized at scale `h`, which swamps displacements smaller than a cell;
/// sub-cells push the quantization down to `h / s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    /// One segment per cell center.
    Centers,
    /// `s^d` sub-cells per cell.
    Fixed(usize),
    /// `s` chosen so that `h / s` is at most the RMS displacement near the
    /// sphere divided by `per_displacement`, clamped to `[2, max]`.
    Adaptive { per_displacement: f64, max: usize },
}

/// Flux through `ball` of the straight-line trajectories `t -> x + t (T(x) - x)`.
///
/// Each source cell with mass `m` deposits `+m` at every outward crossing and
/// `-m` at every inward crossing, into the bin of the crossing angle. The
/// crossing count follows the membership of the endpoints, so the net flux
/// equals `rho0(B) - (T#rho0)(B)` exactly.
pub fn time_integrated_flux(
    t: &TransportMap,
    rho0: &GridDensity,
    ball: &Ball,
    opts: &FluxOptions,
) -> Result<BoundaryFlux> {
    let dim = rho0.dim();
    if t.source().grid() != rho0.grid() {
        return Err(Error::InvalidInput(
            "map and density live on different grids".into(),
        ));
    }
    if dim == 2 && opts.n_bins < 8 {
        return Err(Error::InvalidInput(format!(
            "need at least 8 flux bins, got {}",
            opts.n_bins
        )));
    }
    let n_bins = if dim == 1 { 2 } else { opts.n_bins };
    let grid = rho0.grid();
    let mut acc = vec![Vec::new(); n_bins];
    let mut tangential = 0;
    let width = TAU / n_bins as f64;
    let bin_of = |p: Point| -> usize {
        if dim == 1 {
            return usize::from(p[0] >= ball.center[0]);
        }
        let a = (p[1] - ball.center[1]).atan2(p[0] - ball.center[0]);
        let a = if a < 0.0 { a + TAU } else { a };
        ((a / width) as usize).min(n_bins - 1)
    };
    let h = grid.spacing();
    let n = grid.len();
    let disp: Vec<f64> = (0..n)
        .map(|i| {
            t.target(i)
                .map(|y| crate::numerics::norm(&crate::numerics::sub(&y, &grid.center(i))))
                .unwrap_or(0.0)
        })
        .collect();
    // largest displacement in the 5x5 neighbourhood bounds every sub-cell move
    let [nx, ny] = grid.shape();
    let local_max = |i: usize| -> f64 {
        let (ix, iy) = grid.unindex(i);
        let mut m: f64 = 0.0;
        for jy in iy.saturating_sub(2)..(iy + 3).min(ny) {
            for jx in ix.saturating_sub(2)..(ix + 3).min(nx) {
                m = m.max(disp[grid.index(jx, jy)]);
            }
        }
        m
    };
    let reach = if dim == 1 { 0.5 * h } else { std::f64::consts::FRAC_1_SQRT_2 * h };
    let near: Vec<bool> = (0..n)
        .map(|i| {
            let c = grid.center(i);
            let r = crate::numerics::dist2(&c, &ball.center).sqrt();
            (r - ball.radius).abs() <= reach + local_max(i) + 1e-12
        })
        .collect();
    let sub = match opts.subsample {
        Subsample::Centers => 1,
        Subsample::Fixed(s) => s.max(1),
        Subsample::Adaptive { per_displacement, max } => {
            let band: Vec<f64> = (0..n)
                .filter(|&i| near[i] && rho0.values()[i] > 0.0)
                .map(|i| disp[i] * disp[i])
                .collect();
            let rms = if band.is_empty() { 0.0 } else { (pairwise_sum(&band) / band.len() as f64).sqrt() };
            if rms > 0.0 {
                ((per_displacement * h / rms).ceil() as usize).clamp(2, max.max(2))
            } else {
                2
            }
        }
    };
    let offsets: Vec<Point> = if sub == 1 {
        vec![[0.0, 0.0]]
    } else {
        let o = |a: usize| ((a as f64 + 0.5) / sub as f64 - 0.5) * h;
        if dim == 1 {
            (0..sub).map(|a| [o(a), 0.0]).collect()
        } else {
            (0..sub * sub).map(|k| [o(k % sub), o(k / sub)]).collect()
        }
    };
    for i in 0..n {
        let cell_mass = rho0.cell_mass(i);
        if cell_mass == 0.0 {
            continue;
        }
        let image = t.target(i).ok_or_else(|| {
            Error::InvalidInput(format!("map undefined on source cell {i} with positive mass"))
        })?;
        let center = grid.center(i);
        if sub == 1 || !near[i] {
            // sub-cells of a far cell stay on one side of the sphere
            let (x, y) = (center, image);
            if sub > 1 && ball.contains(&x) == ball.contains(&y) {
                continue;
            }
            record(&mut acc, &mut tangential, crossings(&x, &y, ball, opts.tangent_tol), cell_mass, &bin_of);
            continue;
        }
        let m = cell_mass / offsets.len() as f64;
        for off in &offsets {
            let x = [center[0] + off[0], center[1] + off[1]];
            let y = t.eval(&x).unwrap_or([image[0] + off[0], image[1] + off[1]]);
            record(&mut acc, &mut tangential, crossings(&x, &y, ball, opts.tangent_tol), m, &bin_of);
        }
    }
    log::debug!("flux: {sub}x sub-sampling near the sphere");
    let mut flux = BoundaryFlux {
        ball: *ball,
        dim,
        values: vec![0.0; n_bins],
        reference_mass: rho0.mass_in(ball),
        tangential,
    };
    for (k, terms) in acc.iter().enumerate() {
        flux.values[k] = pairwise_sum(terms) / flux.bin_measure(k);
    }
    if tangential > 0 {
        log::debug!("flux: {tangential} tangential crossings resolved by the midpoint rule");
    }
    Ok(flux)
}

fn record(
    acc: &mut [Vec<f64>],
    tangential: &mut usize,
    c: Crossings,
    m: f64,
    bin_of: &impl Fn(Point) -> usize,
) {
    match c {
        Crossings::None => {}
        Crossings::Out(p) => acc[bin_of(p)].push(m),
        Crossings::In(p) => acc[bin_of(p)].push(-m),
        Crossings::Through(a, b) => {
            acc[bin_of(a)].push(-m);
            acc[bin_of(b)].push(m);
        }
        Crossings::Grazing => *tangential += 1,
    }
}

enum Crossings {
    None,
    Out(Point),
    In(Point),
    Through(Point, Point),
    Grazing,
}

/// Crossings of the segment `[x, y]` with the sphere of `ball`, classified
/// by the membership of the endpoints so the net count is exact.
fn crossings(x: &Point, y: &Point, ball: &Ball, tangent_tol: f64) -> Crossings {
    let (in0, in1) = (ball.contains(x), ball.contains(y));
    if in0 && in1 {
        return Crossings::None;
    }
    // |x - c + s (y - x)|^2 = R^2
    let p = [x[0] - ball.center[0], x[1] - ball.center[1]];
    let v = [y[0] - x[0], y[1] - x[1]];
    let a = v[0] * v[0] + v[1] * v[1];
    if a == 0.0 {
        return Crossings::None;
    }
    let b = p[0] * v[0] + p[1] * v[1];
    let c = p[0] * p[0] + p[1] * p[1] - ball.radius * ball.radius;
    let disc = (b * b - a * c).max(0.0);
    let sq = disc.sqrt();
    let at = |s: f64| {
        let s = s.clamp(0.0, 1.0);
        [x[0] + s * v[0], x[1] + s * v[1]]
    };
    match (in0, in1) {
        (true, false) => Crossings::Out(at((-b + sq) / a)),
        (false, true) => Crossings::In(at((-b - sq) / a)),
        _ => {
            let s_mid = -b / a;
            if !(0.0..=1.0).contains(&s_mid) || b * b <= a * c {
                Crossings::None
            } else if disc <= tangent_tol * b * b {
                // grazing chord: both crossings at the midpoint cancel
                Crossings::Grazing
            } else {
                Crossings::Through(at((-b - sq) / a), at((-b + sq) / a))
            }
        }
    }
}
