//! Discrete optimal transport for the squared Euclidean cost.
//!
//! Two solvers share one plan type: [`solve_exact`] (network simplex on the
//! bipartite cell graph, used as an oracle and for small problems) and
//! [`solve_entropic`] (log-domain Sinkhorn with a separable grid kernel).
//! [`extract_map`] turns a plan into a map by barycentric projection and
//! [`monotone_1d_oracle`] gives the closed-form one-dimensional map.

mod entropic;
mod exact;
mod monotone;

pub use entropic::{solve_entropic, EntropicOptions};
pub use exact::{solve_exact, ExactOptions, DEFAULT_EXACT_CAP};
pub use monotone::monotone_1d_oracle;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::GridDensity;
use crate::numerics::{dist2, dot, fmt17, pairwise_sum, sub, Point};

/// Relative mass tolerance for exact solves.
pub const EXACT_MASS_TOL: f64 = 1e-8;
/// Relative mass tolerance for entropic solves.
pub const ENTROPIC_MASS_TOL: f64 = 1e-6;

/// One `(source cell, target cell, mass)` triple of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanEntry {
    pub src: usize,
    pub dst: usize,
    pub mass: f64,
}

/// A sparse coupling between two gridded densities.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    source: Arc<GridDensity>,
    target: Arc<GridDensity>,
    entries: Vec<PlanEntry>,
    cost: f64,
    reg: Option<f64>,
    /// Dual potential on source cells, convention `f_i + g_j <= |x_i - y_j|^2`.
    source_potential: Option<Vec<f64>>,
}

impl TransportPlan {
    pub fn new(
        source: Arc<GridDensity>,
        target: Arc<GridDensity>,
        mut entries: Vec<PlanEntry>,
        reg: Option<f64>,
        source_potential: Option<Vec<f64>>,
    ) -> Self {
        entries.sort_by_key(|e| (e.src, e.dst));
        let sg = source.grid().clone();
        let tg = target.grid().clone();
        let terms: Vec<f64> = entries
            .iter()
            .map(|e| e.mass * dist2(&sg.center(e.src), &tg.center(e.dst)))
            .collect();
        let cost = pairwise_sum(&terms);
        Self {
            source,
            target,
            entries,
            cost,
            reg,
            source_potential,
        }
    }

    pub fn source(&self) -> &Arc<GridDensity> {
        &self.source
    }

    pub fn target(&self) -> &Arc<GridDensity> {
        &self.target
    }

    /// Entries sorted by `(src, dst)`.
    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    /// Transport cost `sum mass |x - y|^2` (no entropy term).
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Regularization used to compute the plan; `None` for exact plans.
    pub fn reg(&self) -> Option<f64> {
        self.reg
    }

    pub fn source_potential(&self) -> Option<&[f64]> {
        self.source_potential.as_deref()
    }

    /// L1 defects of the row and column sums against the cell masses.
    pub fn marginal_defects(&self) -> (f64, f64) {
        let mut rows = self.source.cell_masses();
        let mut cols = self.target.cell_masses();
        for e in &self.entries {
            rows[e.src] -= e.mass;
            cols[e.dst] -= e.mass;
        }
        (
            rows.iter().map(|v| v.abs()).sum(),
            cols.iter().map(|v| v.abs()).sum(),
        )
    }

    /// CSV `src_index,dst_index,mass` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src_index,dst_index,mass\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.src, e.dst, fmt17(e.mass));
        }
        out
    }
}

/// A transport map sampled on the source cells.
#[derive(Clone, Debug)]
pub struct TransportMap {
    source: Arc<GridDensity>,
    targets: Vec<Point>,
    defined: Vec<bool>,
    spread: Vec<f64>,
    potential: Option<Vec<f64>>,
}

impl TransportMap {
    /// Build a map from per-cell images. Cells with `defined[i] == false`
    /// carry no information and are ignored by interpolation.
    pub fn new(
        source: Arc<GridDensity>,
        targets: Vec<Point>,
        defined: Vec<bool>,
        spread: Vec<f64>,
        potential: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = source.grid().len();
        if targets.len() != n || defined.len() != n || spread.len() != n {
            return Err(Error::InvalidInput(format!(
                "map arrays do not match the {n} source cells"
            )));
        }
        Ok(Self {
            source,
            targets,
            defined,
            spread,
            potential,
        })
    }

    /// Map defined on every cell by `f`, with zero spread.
    pub fn from_fn(source: Arc<GridDensity>, f: impl Fn(Point) -> Point) -> Self {
        let g = source.grid().clone();
        let targets: Vec<Point> = g.centers().map(f).collect();
        let n = targets.len();
        Self {
            source,
            targets,
            defined: vec![true; n],
            spread: vec![0.0; n],
            potential: None,
        }
    }

    pub fn identity(source: Arc<GridDensity>) -> Self {
        Self::from_fn(source, |x| x)
    }

    pub fn source(&self) -> &Arc<GridDensity> {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn targets(&self) -> &[Point] {
        &self.targets
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    /// Image of cell `i`, if defined.
    pub fn target(&self, i: usize) -> Option<Point> {
        self.defined[i].then(|| self.targets[i])
    }

    /// Mass-weighted variance of the plan targets of each cell.
    pub fn spread(&self) -> &[f64] {
        &self.spread
    }

    /// Largest per-coordinate spread (standard deviation) over defined cells.
    pub fn max_spread(&self) -> f64 {
        let d = self.dim() as f64;
        (0..self.targets.len())
            .filter(|&i| self.defined[i])
            .map(|i| (self.spread[i] / d).sqrt())
            .fold(0.0, f64::max)
    }

    /// Cells whose mass was zero and were left undefined.
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.defined.len()).filter(|&i| !self.defined[i]).collect()
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }

    /// Evaluate the map at an arbitrary point by bilinear interpolation of
    /// the displacement `T(x) - x`. Undefined stencil corners are dropped
    /// and the remaining weights renormalized; if no corner is defined the
    /// nearest defined cell within two cells is used.
    pub fn eval(&self, p: &Point) -> Option<Point> {
        let grid = self.source.grid();
        let st = grid.stencil(p)?;
        let mut w_sum = 0.0;
        let mut disp = [0.0, 0.0];
        for (i, w) in st {
            if w > 0.0 && self.defined[i] {
                let c = grid.center(i);
                disp[0] += w * (self.targets[i][0] - c[0]);
                disp[1] += w * (self.targets[i][1] - c[1]);
                w_sum += w;
            }
        }
        if w_sum > 1e-12 {
            return Some([p[0] + disp[0] / w_sum, p[1] + disp[1] / w_sum]);
        }
        self.nearest_defined(p, 2).map(|i| {
            let c = grid.center(i);
            [
                p[0] + self.targets[i][0] - c[0],
                p[1] + self.targets[i][1] - c[1],
            ]
        })
    }

    fn nearest_defined(&self, p: &Point, radius_cells: usize) -> Option<usize> {
        let grid = self.source.grid();
        let [nx, ny] = grid.shape();
        let h = grid.spacing();
        let o = grid.origin();
        let cx = (((p[0] - o[0]) / h).floor() as isize).clamp(0, nx as isize - 1);
        let cy = if grid.dim() == 1 {
            0
        } else {
            (((p[1] - o[1]) / h).floor() as isize).clamp(0, ny as isize - 1)
        };
        let r = radius_cells as isize;
        let mut best: Option<(f64, usize)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let ix = cx + dx;
                let iy = cy + dy;
                if ix < 0 || iy < 0 || ix >= nx as isize || iy >= ny as isize {
                    continue;
                }
                let i = grid.index(ix as usize, iy as usize);
                if !self.defined[i] {
                    continue;
                }
                let d = dist2(&grid.center(i), p);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Worst violation of `(T(x) - T(y)) . (x - y) >= 0` over all pairs of
    /// defined cells with positive mass (or over `max_pairs` sampled pairs
    /// when given). Returns the most negative inner product (0 if none).
    pub fn monotonicity_violation(&self, max_pairs: Option<usize>) -> f64 {
        let cells: Vec<usize> = (0..self.targets.len())
            .filter(|&i| self.defined[i] && self.source.values()[i] > 0.0)
            .collect();
        let grid = self.source.grid();
        let mut worst: f64 = 0.0;
        let mut check = |a: usize, b: usize| {
            let v = dot(
                &sub(&self.targets[a], &self.targets[b]),
                &sub(&grid.center(a), &grid.center(b)),
            );
            worst = worst.min(v);
        };
        let n = cells.len();
        let total = n * n.saturating_sub(1) / 2;
        match max_pairs {
            Some(cap) if cap < total => {
                // deterministic stride sampling of pairs
                let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
                for _ in 0..cap {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    let a = (state >> 33) as usize % n;
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    let b = (state >> 33) as usize % n;
                    if a != b {
                        check(cells[a], cells[b]);
                    }
                }
            }
            _ => {
                for a in 0..n {
                    for b in a + 1..n {
                        check(cells[a], cells[b]);
                    }
                }
            }
        }
        worst
    }

    /// CSV `x...,Tx...` per defined cell with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let grid = self.source.grid();
        let mut out = if self.dim() == 1 {
            String::from("x,Tx\n")
        } else {
            String::from("x,y,Tx,Ty\n")
        };
        for i in 0..self.targets.len() {
            if !self.defined[i] {
                continue;
            }
            let c = grid.center(i);
            let t = self.targets[i];
            if self.dim() == 1 {
                let _ = writeln!(out, "{},{}", fmt17(c[0]), fmt17(t[0]));
            } else {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt17(c[0]),
                    fmt17(c[1]),
                    fmt17(t[0]),
                    fmt17(t[1])
                );
            }
        }
        out
    }
}

/// Monotonicity tolerance `1e-6 diam^2` for a map on `grid`.
pub fn monotone_tol(grid: &crate::measures::Grid) -> f64 {
    1e-6 * grid.diameter().powi(2)
}

/// Barycentric projection of a plan: `T(x)` is the mass-weighted mean of the
/// targets of source cell `x`; the per-cell spread is the weighted variance.
/// Source cells without mass are left undefined.
pub fn extract_map(plan: &TransportPlan) -> Result<TransportMap> {
    let sg = plan.source.grid();
    let tg = plan.target.grid();
    let n = sg.len();
    let mut w = vec![0.0; n];
    let mut m1 = vec![[0.0, 0.0]; n];
    let mut m2 = vec![0.0; n];
    for e in &plan.entries {
        let y = tg.center(e.dst);
        w[e.src] += e.mass;
        m1[e.src][0] += e.mass * y[0];
        m1[e.src][1] += e.mass * y[1];
    }
    let mut targets = vec![[0.0, 0.0]; n];
    let mut defined = vec![false; n];
    for i in 0..n {
        if w[i] > 0.0 {
            targets[i] = [m1[i][0] / w[i], m1[i][1] / w[i]];
            defined[i] = true;
        }
    }
    for e in &plan.entries {
        let y = tg.center(e.dst);
        m2[e.src] += e.mass * dist2(&y, &targets[e.src]);
    }
    let spread: Vec<f64> = (0..n)
        .map(|i| if w[i] > 0.0 { m2[i] / w[i] } else { 0.0 })
        .collect();
    let skipped = defined.iter().filter(|d| !**d).count();
    if skipped > 0 {
        log::debug!("extract_map: {skipped} source cells without mass skipped");
    }
    let potential = plan.source_potential.as_ref().map(|f| {
        // Brenier potential psi = |x|^2/2 - f/2 for the convention f + g <= |x-y|^2
        (0..n)
            .map(|i| {
                let c = sg.center(i);
                0.5 * (c[0] * c[0] + c[1] * c[1]) - 0.5 * f[i]
            })
            .collect()
    });
    TransportMap::new(plan.source.clone(), targets, defined, spread, potential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Grid;

    #[test]
    fn bijection_plan_gives_exact_map() {
        let g = Grid::new(2, [3, 1], [0.0, 0.0], 1.0).unwrap();
        let rho = Arc::new(GridDensity::uniform(g.clone(), 1.0).unwrap());
        // cell i -> cell (2 - i)
        let entries = (0..3)
            .map(|i| PlanEntry {
                src: i,
                dst: 2 - i,
                mass: 1.0,
            })
            .collect();
        let plan = TransportPlan::new(rho.clone(), rho.clone(), entries, None, None);
        let map = extract_map(&plan).unwrap();
        for i in 0..3 {
            assert_eq!(map.target(i).unwrap(), g.center(2 - i));
            assert_eq!(map.spread()[i], 0.0);
        }
        assert_eq!(plan.marginal_defects(), (0.0, 0.0));
    }

    #[test]
    fn zero_mass_cells_are_skipped() {
        let g = Grid::new(1, [3, 1], [0.0, 0.0], 1.0).unwrap();
        let rho = Arc::new(GridDensity::new(g, vec![1.0, 0.0, 1.0]).unwrap());
        let entries = vec![
            PlanEntry { src: 0, dst: 0, mass: 1.0 },
            PlanEntry { src: 2, dst: 2, mass: 1.0 },
        ];
        let plan = TransportPlan::new(rho.clone(), rho, entries, None, None);
        let map = extract_map(&plan).unwrap();
        assert_eq!(map.skipped(), vec![1]);
    }

    #[test]
    fn eval_interpolates_affine_displacement() {
        let g = Grid::covering(2, [0.0, 0.0], 1.0, 16).unwrap();
        let rho = Arc::new(GridDensity::uniform(g, 1.0).unwrap());
        let map = TransportMap::from_fn(rho, |x| [1.1 * x[0] + 0.2, 0.9 * x[1] - 0.1]);
        let p = [0.33, -0.41];
        let t = map.eval(&p).unwrap();
        assert!((t[0] - (1.1 * p[0] + 0.2)).abs() < 1e-12);
        assert!((t[1] - (0.9 * p[1] - 0.1)).abs() < 1e-12);
        assert!(map.monotonicity_violation(None) >= 0.0);
    }
}
