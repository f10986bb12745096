//! Excess energy and the localized smallness quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{data_term, restrict, Ball, GridDensity};
use crate::numerics::{dist2, pairwise_sum, Point};
use crate::transport::{
    extract_map, solve_entropic, solve_exact, EntropicOptions, ExactOptions, TransportMap,
};

/// `E` and `D` on one ball, kept separate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    pub center: Point,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "E")]
    pub excess: f64,
    #[serde(rename = "D")]
    pub data: f64,
}

impl ExcessReport {
    pub fn total(&self) -> f64 {
        self.excess + self.data
    }
}

/// Mean of `|T(x) - x|^2 rho0(x)` over the cells of `ball`, without the
/// `R^-2` factor.
pub(crate) fn mean_sq_displacement(
    t: &TransportMap,
    rho0: &GridDensity,
    ball: &Ball,
    shift: &Point,
) -> Result<f64> {
    let grid = rho0.grid();
    let cells = grid.cells_in(ball);
    if cells.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    let mut terms = Vec::with_capacity(cells.len());
    for &i in &cells {
        let w = rho0.values()[i];
        if w == 0.0 {
            terms.push(0.0);
            continue;
        }
        let y = t.target(i).ok_or_else(|| {
            Error::InvalidInput(format!("map undefined on source cell {i} with positive mass"))
        })?;
        let x = grid.center(i);
        let y = [y[0] - shift[0], y[1] - shift[1]];
        terms.push(dist2(&y, &x) * w);
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// `R^-2` times the mean of `|T(x) - x|^2 rho0(x)` over the cells of `ball`.
///
/// The mean divides by the discrete ball volume (cell count times `h^d`),
/// the same convention as [`crate::measures::mean_over_ball`].
pub fn excess_energy(t: &TransportMap, rho0: &GridDensity, ball: &Ball) -> Result<f64> {
    check_same_grid(t, rho0)?;
    Ok(mean_sq_displacement(t, rho0, ball, &[0.0, 0.0])? / (ball.radius * ball.radius))
}

pub fn hypothesis_quantity(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    ball: &Ball,
) -> Result<ExcessReport> {
    Ok(ExcessReport {
        center: ball.center,
        radius: ball.radius,
        excess: excess_energy(t, rho0, ball)?,
        data: data_term(rho0, rho1, ball)?,
    })
}

fn check_same_grid(t: &TransportMap, rho0: &GridDensity) -> Result<()> {
    if t.source().grid() != rho0.grid() {
        return Err(Error::InvalidInput(
            "map and density live on different grids".into(),
        ));
    }
    Ok(())
}

/// Result of [`wasserstein_to_uniform`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformDistance {
    /// Squared transport distance from the restriction to the flat density
    /// of equal mass on the same cells.
    pub w2: f64,
    /// `(rho(B)/|B| - 1)^2`.
    pub mean_term: f64,
    /// Whether the exact solver produced `w2`.
    pub exact: bool,
}

impl UniformDistance {
    pub fn total(&self) -> f64 {
        self.w2 + self.mean_term
    }
}

/// Squared distance of `rho` restricted to `ball` from the uniform density
/// of the same mass on the ball, plus the squared mean deviation. Falls back
/// to the entropic solver above the exact size cap.
pub fn wasserstein_to_uniform(rho: &GridDensity, ball: &Ball) -> Result<UniformDistance> {
    let restricted = restrict(rho, ball)?;
    let grid = rho.grid();
    let cells = grid.cells_in(ball);
    let mass = restricted.mass();
    if !(mass > 0.0) {
        return Err(Error::InvalidInput("restriction carries no mass".into()));
    }
    let level = mass / (cells.len() as f64 * grid.cell_volume());
    let mut flat = vec![0.0; grid.len()];
    for &i in &cells {
        flat[i] = level;
    }
    let flat = GridDensity::new(grid.clone(), flat)?;
    let mean_term = (level - 1.0).powi(2);
    let exact_opts = ExactOptions::default();
    let (w2, exact) = match solve_exact(&restricted, &flat, &exact_opts) {
        Ok(plan) => (plan.cost(), true),
        Err(Error::ProblemTooLarge { .. }) => {
            let h = grid.spacing();
            let plan = solve_entropic(
                &restricted,
                &flat,
                h * h,
                200_000,
                1e-7,
                &EntropicOptions::default(),
            )?;
            // transport part of the barycentric map, free of the blur
            let map = extract_map(&plan)?;
            let m = restricted.cell_masses();
            let terms: Vec<f64> = (0..grid.len())
                .filter_map(|i| map.target(i).map(|y| m[i] * dist2(&y, &grid.center(i))))
                .collect();
            (pairwise_sum(&terms), false)
        }
        Err(e) => return Err(e),
    };
    Ok(UniformDistance { w2, mean_term, exact })
}
