//! Gridded densities, balls, restriction and the data term.
//!
//! Every integral over a ball in this crate uses the same rule: a cell
//! belongs to the ball when its center does. The resulting geometric error
//! is O(h) and is shared by all modules, so masses, means and excess
//! energies stay mutually consistent.

mod io;

pub use io::{read_csv_density, read_pgm_density, write_csv_density, PgmRange};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dist2, pairwise_sum, unit_ball_volume, Point};

/// A closed ball `B_R(center)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    /// Ball of radius `radius` centered at the origin.
    pub fn centered(radius: f64) -> Result<Self> {
        Self::new([0.0, 0.0], radius)
    }

    pub fn contains(&self, p: &Point) -> bool {
        dist2(p, &self.center) <= self.radius * self.radius
    }

    /// Lebesgue measure of the ball in dimension `dim`.
    pub fn volume(&self, dim: usize) -> f64 {
        unit_ball_volume(dim) * self.radius.powi(dim as i32)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center: self.center,
            radius: self.radius * factor,
        }
    }
}

/// Geometry of a regular Cartesian grid.
///
/// Cells are indexed `ix + nx * iy`. One-dimensional grids have `ny = 1`
/// and all cell centers lie on the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    shape: [usize; 2],
    origin: Point,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, shape: [usize; 2], origin: Point, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidInput(format!(
                "dimension {dim} unsupported (1 or 2)"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let shape = if dim == 1 { [shape[0], 1] } else { shape };
        if shape[0] == 0 || shape[1] == 0 {
            return Err(Error::InvalidInput("grid has no cells".into()));
        }
        let origin = if dim == 1 { [origin[0], 0.0] } else { origin };
        Ok(Self {
            dim,
            shape,
            origin,
            spacing,
        })
    }

    /// Square (or interval) grid with `n` cells per axis covering
    /// `center +- half_width`.
    pub fn covering(dim: usize, center: Point, half_width: f64, n: usize) -> Result<Self> {
        let h = 2.0 * half_width / n as f64;
        Self::new(
            dim,
            [n, n],
            [center[0] - half_width, center[1] - half_width],
            h,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix + self.shape[0] * iy
    }

    pub fn unindex(&self, i: usize) -> (usize, usize) {
        (i % self.shape[0], i / self.shape[0])
    }

    /// Coordinate of the cell centers along `axis`.
    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        if axis == 1 && self.dim == 1 {
            return vec![0.0];
        }
        (0..self.shape[axis])
            .map(|k| self.origin[axis] + (k as f64 + 0.5) * self.spacing)
            .collect()
    }

    pub fn center(&self, i: usize) -> Point {
        let (ix, iy) = self.unindex(i);
        let x = self.origin[0] + (ix as f64 + 0.5) * self.spacing;
        let y = if self.dim == 1 {
            0.0
        } else {
            self.origin[1] + (iy as f64 + 0.5) * self.spacing
        };
        [x, y]
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.center(i))
    }

    /// Lower and upper corners of the covered box.
    pub fn bounds(&self) -> (Point, Point) {
        let hi_y = if self.dim == 1 {
            0.0
        } else {
            self.origin[1] + self.shape[1] as f64 * self.spacing
        };
        (
            self.origin,
            [self.origin[0] + self.shape[0] as f64 * self.spacing, hi_y],
        )
    }

    /// Largest distance between two points of the covered box.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        dist2(&lo, &hi).sqrt()
    }

    /// Whether the closed ball lies inside the covered box.
    pub fn contains_ball(&self, ball: &Ball) -> bool {
        let (lo, hi) = self.bounds();
        let tol = 1e-12 * self.spacing;
        for axis in 0..self.dim {
            if ball.center[axis] - ball.radius < lo[axis] - tol
                || ball.center[axis] + ball.radius > hi[axis] + tol
            {
                return false;
            }
        }
        true
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        let (lo, hi) = self.bounds();
        (0..self.dim).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Indices of cells whose center lies in `ball`, in increasing order.
    pub fn cells_in(&self, ball: &Ball) -> Vec<usize> {
        let h = self.spacing;
        let r = ball.radius;
        let range = |axis: usize| -> (usize, usize) {
            let n = self.shape[axis];
            if axis == 1 && self.dim == 1 {
                return (0, 1);
            }
            let lo = ((ball.center[axis] - r - self.origin[axis]) / h - 0.5).floor();
            let hi = ((ball.center[axis] + r - self.origin[axis]) / h - 0.5).ceil();
            let lo = lo.max(0.0) as usize;
            let hi = (hi.max(-1.0) + 1.0).min(n as f64) as usize;
            (lo.min(n), hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let mut out = Vec::new();
        for iy in y0..y1 {
            for ix in x0..x1 {
                let i = self.index(ix, iy);
                if ball.contains(&self.center(i)) {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Continuous cell coordinates of `p` (cell centers sit at integers).
    fn fractional_index(&self, p: &Point) -> [f64; 2] {
        let u = (p[0] - self.origin[0]) / self.spacing - 0.5;
        let v = if self.dim == 1 {
            0.0
        } else {
            (p[1] - self.origin[1]) / self.spacing - 0.5
        };
        [u, v]
    }

    /// Bilinear interpolation stencil at `p`: up to four `(cell, weight)`
    /// pairs. Points between the outermost centers and the box edge use the
    /// nearest centers. Returns `None` outside the covered box.
    pub fn stencil(&self, p: &Point) -> Option<[(usize, f64); 4]> {
        if !self.contains_point(p) {
            return None;
        }
        let [u, v] = self.fractional_index(p);
        let (ix0, ix1, wx) = axis_stencil(u, self.shape[0]);
        let (iy0, iy1, wy) = if self.dim == 1 {
            (0, 0, 0.0)
        } else {
            axis_stencil(v, self.shape[1])
        };
        Some([
            (self.index(ix0, iy0), (1.0 - wx) * (1.0 - wy)),
            (self.index(ix1, iy0), wx * (1.0 - wy)),
            (self.index(ix0, iy1), (1.0 - wx) * wy),
            (self.index(ix1, iy1), wx * wy),
        ])
    }
}

fn axis_stencil(u: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, i0 + 1, u - i0 as f64)
}

/// A real-valued field sampled at the cell centers of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field has non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear interpolation; `None` outside the grid box.
    pub fn sample(&self, p: &Point) -> Option<f64> {
        let st = self.grid.stencil(p)?;
        Some(st.iter().map(|(i, w)| w * self.values[*i]).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Volume-weighted mean of `f` over the cells of `ball`.
pub fn mean_over_ball(f: &ScalarField, ball: &Ball) -> Result<f64> {
    let cells = f.grid.cells_in(ball);
    if cells.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    let vals: Vec<f64> = cells.iter().map(|&i| f.values[i]).collect();
    Ok(pairwise_sum(&vals) / vals.len() as f64)
}

/// A nonnegative density (mass per unit volume) sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    field: ScalarField,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!("negative density value {v}")));
        }
        Ok(Self {
            field: ScalarField::new(grid, values)?,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values)
    }

    pub fn uniform(grid: Grid, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }

    pub fn dim(&self) -> usize {
        self.field.grid.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn as_field(&self) -> &ScalarField {
        &self.field
    }

    /// Mass carried by cell `i`, `h^d rho_i`.
    pub fn cell_mass(&self, i: usize) -> f64 {
        self.field.values[i] * self.field.grid.cell_volume()
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        let vol = self.field.grid.cell_volume();
        self.field.values.iter().map(|v| v * vol).collect()
    }

    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.field.values) * self.field.grid.cell_volume()
    }

    /// Mass of the cells whose center lies in `ball`.
    pub fn mass_in(&self, ball: &Ball) -> f64 {
        let vals: Vec<f64> = self
            .field
            .grid
            .cells_in(ball)
            .iter()
            .map(|&i| self.field.values[i])
            .collect();
        pairwise_sum(&vals) * self.field.grid.cell_volume()
    }

    /// Bilinear interpolation, zero outside the grid box.
    pub fn sample(&self, p: &Point) -> f64 {
        self.field.sample(p).unwrap_or(0.0).max(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.field.grid.clone(),
            self.field.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Support cells (positive mass).
    pub fn support(&self) -> Vec<usize> {
        (0..self.field.values.len())
            .filter(|&i| self.field.values[i] > 0.0)
            .collect()
    }
}

/// Density equal to `rho` on cells whose center lies in `ball`, zero
/// elsewhere. The grid geometry is unchanged.
pub fn restrict(rho: &GridDensity, ball: &Ball) -> Result<GridDensity> {
    let cells = rho.grid().cells_in(ball);
    if cells.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    let mut values = vec![0.0; rho.grid().len()];
    for i in cells {
        values[i] = rho.values()[i];
    }
    GridDensity::new(rho.grid().clone(), values)
}

/// `||1 - rho||_inf^2` over the cells of `ball`.
pub fn sup_deviation_sq(rho: &GridDensity, ball: &Ball) -> Result<f64> {
    let cells = rho.grid().cells_in(ball);
    if cells.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    Ok(cells
        .iter()
        .map(|&i| (1.0 - rho.values()[i]).powi(2))
        .fold(0.0, f64::max))
}

/// The data term `||1 - rho0||^2_inf + ||1 - rho1||^2_inf` on `ball`.
pub fn data_term(rho0: &GridDensity, rho1: &GridDensity, ball: &Ball) -> Result<f64> {
    Ok(sup_deviation_sq(rho0, ball)? + sup_deviation_sq(rho1, ball)?)
}

/// Rescale `rho1` so its total mass equals that of `rho0`.
///
/// Fails with [`Error::MassMismatch`] when the relative defect exceeds
/// `tol`; the applied factor is logged and returned.
pub fn equalize_mass(
    rho0: &GridDensity,
    rho1: &GridDensity,
    tol: f64,
) -> Result<(GridDensity, f64)> {
    let m0 = rho0.mass();
    let m1 = rho1.mass();
    if !(m0 > 0.0) || !(m1 > 0.0) {
        return Err(Error::InvalidInput("marginal with zero total mass".into()));
    }
    let relative = (m0 - m1).abs() / m0.max(m1);
    if relative > tol {
        return Err(Error::MassMismatch {
            source_mass: m0,
            target_mass: m1,
            relative,
        });
    }
    let factor = m0 / m1;
    if factor != 1.0 {
        log::debug!("renormalizing target mass by factor {factor:.17e}");
    }
    Ok((rho1.scaled(factor)?, factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(n: usize, half: f64) -> Grid {
        Grid::covering(2, [0.0, 0.0], half, n).unwrap()
    }

    #[test]
    fn restrict_uniform_to_unit_disk() {
        let g = square(200, 1.0);
        let rho = GridDensity::uniform(g.clone(), 1.0).unwrap();
        let b = Ball::centered(1.0).unwrap();
        let r = restrict(&rho, &b).unwrap();
        assert!((r.mass() - PI).abs() < 4.0 * g.spacing());
    }

    #[test]
    fn restrict_disjoint_ball_is_error() {
        let rho = GridDensity::uniform(square(10, 1.0), 1.0).unwrap();
        let b = Ball::new([5.0, 5.0], 0.5).unwrap();
        assert!(matches!(restrict(&rho, &b), Err(Error::EmptyRestriction)));
    }

    #[test]
    fn restrict_checkerboard_matches_direct_sum() {
        let g = square(64, 1.0);
        let rho = GridDensity::new(
            g.clone(),
            (0..g.len())
                .map(|i| {
                    let (ix, iy) = g.unindex(i);
                    if (ix + iy) % 2 == 0 {
                        0.0
                    } else {
                        2.0
                    }
                })
                .collect(),
        )
        .unwrap();
        let b = Ball::centered(0.5).unwrap();
        // direct summation oracle over all cells
        let mut oracle = 0.0;
        for i in 0..g.len() {
            let c = g.center(i);
            if c[0] * c[0] + c[1] * c[1] <= 0.25 {
                oracle += rho.values()[i] * g.cell_volume();
            }
        }
        let got = restrict(&rho, &b).unwrap().mass();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - PI * 0.25).abs() < 4.0 * g.spacing());
    }

    #[test]
    fn restrict_is_idempotent() {
        let g = square(33, 1.2);
        let rho = GridDensity::from_fn(g, |p| 1.0 + 0.3 * (3.0 * p[0]).sin()).unwrap();
        let b = Ball::new([0.1, -0.2], 0.7).unwrap();
        let once = restrict(&rho, &b).unwrap();
        let twice = restrict(&once, &b).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn data_term_examples() {
        let g = square(32, 1.2);
        let b = Ball::centered(1.0).unwrap();
        let one = GridDensity::uniform(g.clone(), 1.0).unwrap();
        assert_eq!(data_term(&one, &one, &b).unwrap(), 0.0);
        let d = 0.07;
        let up = GridDensity::uniform(g.clone(), 1.0 + d).unwrap();
        assert!((data_term(&up, &one, &b).unwrap() - d * d).abs() < 1e-15);

        let pert = GridDensity::from_fn(g.clone(), |p| {
            1.0 + 0.1 * (PI * p[0]).sin() * (PI * p[1]).sin()
        })
        .unwrap();
        // direct scan oracle
        let mut oracle: f64 = 0.0;
        for (i, c) in g.centers().enumerate() {
            if c[0] * c[0] + c[1] * c[1] <= 1.0 {
                oracle = oracle.max((1.0 - pert.values()[i]).powi(2));
            }
        }
        assert_eq!(data_term(&pert, &one, &b).unwrap(), oracle);
        assert_eq!(
            data_term(&pert, &one, &b).unwrap(),
            data_term(&one, &pert, &b).unwrap()
        );
    }

    #[test]
    fn mean_over_ball_examples() {
        let g = square(200, 1.1);
        let b = Ball::centered(1.0).unwrap();
        let c = ScalarField::from_fn(g.clone(), |_| 2.5).unwrap();
        assert!((mean_over_ball(&c, &b).unwrap() - 2.5).abs() < 1e-14);
        let x = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        assert!(mean_over_ball(&x, &b).unwrap().abs() < g.spacing());
        let r2 = ScalarField::from_fn(g.clone(), |p| p[0] * p[0] + p[1] * p[1]).unwrap();
        assert!((mean_over_ball(&r2, &b).unwrap() - 0.5).abs() < 2.0 * g.spacing());
        let far = Ball::new([9.0, 9.0], 0.1).unwrap();
        assert!(matches!(
            mean_over_ball(&c, &far),
            Err(Error::EmptyRestriction)
        ));
    }

    #[test]
    fn cells_in_agrees_with_brute_force() {
        let g = Grid::new(2, [17, 23], [-0.3, 0.4], 0.05).unwrap();
        let b = Ball::new([0.1, 0.9], 0.33).unwrap();
        let brute: Vec<usize> = (0..g.len()).filter(|&i| b.contains(&g.center(i))).collect();
        assert_eq!(g.cells_in(&b), brute);
        let g1 = Grid::new(1, [40, 1], [-1.0, 0.0], 0.05).unwrap();
        let b1 = Ball::new([0.12, 0.0], 0.31).unwrap();
        let brute1: Vec<usize> = (0..g1.len()).filter(|&i| b1.contains(&g1.center(i))).collect();
        assert_eq!(g1.cells_in(&b1), brute1);
    }

    #[test]
    fn bilinear_sample_reproduces_affine() {
        let g = square(20, 1.0);
        let f = ScalarField::from_fn(g, |p| 1.0 + 2.0 * p[0] - 3.0 * p[1]).unwrap();
        let p = [0.123, -0.456];
        assert!((f.sample(&p).unwrap() - (1.0 + 0.246 + 1.368)).abs() < 1e-12);
        assert!(f.sample(&[2.0, 0.0]).is_none());
    }

    #[test]
    fn equalize_mass_rejects_large_defect() {
        let g = square(8, 1.0);
        let a = GridDensity::uniform(g.clone(), 1.0).unwrap();
        let b = GridDensity::uniform(g, 1.1).unwrap();
        assert!(matches!(
            equalize_mass(&a, &b, 1e-8),
            Err(Error::MassMismatch { .. })
        ));
        let (c, f) = equalize_mass(&a, &b, 0.2).unwrap();
        assert!((c.mass() - a.mass()).abs() < 1e-12);
        assert!((f - 1.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn negative_density_rejected() {
        let g = square(2, 1.0);
        assert!(GridDensity::new(g, vec![1.0, -0.1, 1.0, 1.0]).is_err());
    }
}
