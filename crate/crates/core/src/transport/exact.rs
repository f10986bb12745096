//! Exact discrete transport by the primal network simplex method.
//!
//! The bipartite graph has one node per source cell with positive mass, one
//! per target cell with positive mass, and a root joined to every node by an
//! artificial arc. All arcs are uncapacitated, so non-tree arcs carry zero
//! flow and only tree flows are stored. Pivoting follows the strongly
//! feasible tree rule (last blocking arc from the apex of the cycle), which
//! rules out cycling on the heavily degenerate transportation polytope.

use std::sync::Arc;

use super::{PlanEntry, TransportPlan, EXACT_MASS_TOL};
use crate::error::{Error, Result};
use crate::measures::{equalize_mass, GridDensity};
use crate::numerics::{dist2, Point};

/// Default cap on the number of source cells with positive mass.
pub const DEFAULT_EXACT_CAP: usize = 4096;

#[derive(Clone, Copy, Debug)]
pub struct ExactOptions {
    pub max_source_cells: usize,
    pub mass_tol: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            max_source_cells: DEFAULT_EXACT_CAP,
            mass_tol: EXACT_MASS_TOL,
        }
    }
}

/// Minimize `sum mass |x - y|^2` over all couplings of `rho0` and `rho1`.
pub fn solve_exact(
    rho0: &GridDensity,
    rho1: &GridDensity,
    opts: &ExactOptions,
) -> Result<TransportPlan> {
    if rho0.dim() != rho1.dim() {
        return Err(Error::InvalidInput("marginals differ in dimension".into()));
    }
    let (rho1, _) = equalize_mass(rho0, rho1, opts.mass_tol)?;
    let src: Vec<usize> = rho0.support();
    let dst: Vec<usize> = rho1.support();
    if src.len() > opts.max_source_cells {
        return Err(Error::ProblemTooLarge {
            cells: src.len(),
            cap: opts.max_source_cells,
        });
    }
    let sg = rho0.grid();
    let tg = rho1.grid();
    let xs: Vec<Point> = src.iter().map(|&i| sg.center(i)).collect();
    let ys: Vec<Point> = dst.iter().map(|&j| tg.center(j)).collect();
    let supply: Vec<f64> = src.iter().map(|&i| rho0.cell_mass(i)).collect();
    let mut demand: Vec<f64> = dst.iter().map(|&j| rho1.cell_mass(j)).collect();
    // make the totals agree bit-for-bit so the problem is feasible
    let total: f64 = supply.iter().sum();
    let others: f64 = demand[..demand.len() - 1].iter().sum();
    let last = demand.len() - 1;
    demand[last] = total - others;
    if demand[last] < 0.0 {
        return Err(Error::SolverFailure("mass balancing produced a negative demand".into()));
    }

    let mut ns = NetworkSimplex::new(&xs, &ys, &supply, &demand);
    ns.run()?;

    let mut entries = Vec::new();
    for (u, &flow) in ns.flow.iter().enumerate() {
        if u == ns.root || flow <= 0.0 {
            continue;
        }
        if let Some((i, j)) = ns.real_arc(ns.pred[u]) {
            entries.push(PlanEntry {
                src: src[i],
                dst: dst[j],
                mass: flow,
            });
        }
    }
    // source potentials, convention f_i + g_j <= |x_i - y_j|^2
    let mut f = vec![f64::NAN; sg.len()];
    let base = ns.pi[0];
    for (k, &i) in src.iter().enumerate() {
        f[i] = -(ns.pi[k] - base);
    }
    Ok(TransportPlan::new(
        Arc::new(rho0.clone()),
        Arc::new(rho1),
        entries,
        None,
        Some(f),
    ))
}

struct NetworkSimplex<'a> {
    xs: &'a [Point],
    ys: &'a [Point],
    m: usize,
    n: usize,
    root: usize,
    art_cost: f64,
    /// Parent in the spanning tree, `usize::MAX` for the root.
    parent: Vec<usize>,
    /// Arc joining a node to its parent.
    pred: Vec<usize>,
    /// True when `pred[u]` is oriented from `u` to its parent.
    up: Vec<bool>,
    /// Flow on `pred[u]`.
    flow: Vec<f64>,
    pi: Vec<f64>,
    depth: Vec<usize>,
    stamp: Vec<u32>,
    epoch: u32,
    next_arc: usize,
}

impl<'a> NetworkSimplex<'a> {
    fn new(xs: &'a [Point], ys: &'a [Point], supply: &[f64], demand: &[f64]) -> Self {
        let m = xs.len();
        let n = ys.len();
        let nodes = m + n + 1;
        let root = m + n;
        let mut max_c: f64 = 0.0;
        for x in xs {
            for y in ys {
                max_c = max_c.max(dist2(x, y));
            }
        }
        let art_cost = (max_c + 1.0) * (m + n) as f64;
        let mut parent = vec![root; nodes];
        let mut pred = vec![usize::MAX; nodes];
        let mut up = vec![false; nodes];
        let mut flow = vec![0.0; nodes];
        for i in 0..m {
            pred[i] = m * n + i;
            up[i] = true;
            flow[i] = supply[i];
        }
        for j in 0..n {
            pred[m + j] = m * n + m + j;
            up[m + j] = false;
            flow[m + j] = demand[j];
        }
        parent[root] = usize::MAX;
        let mut ns = Self {
            xs,
            ys,
            m,
            n,
            root,
            art_cost,
            parent,
            pred,
            up,
            flow,
            pi: vec![0.0; nodes],
            depth: vec![0; nodes],
            stamp: vec![0; nodes],
            epoch: 0,
            next_arc: 0,
        };
        ns.refresh_tree();
        ns
    }

    fn real_arc(&self, arc: usize) -> Option<(usize, usize)> {
        (arc < self.m * self.n).then(|| (arc / self.n, arc % self.n))
    }

    /// Endpoints `(tail, head)` and cost of an arc.
    fn arc(&self, arc: usize) -> (usize, usize, f64) {
        if let Some((i, j)) = self.real_arc(arc) {
            return (i, self.m + j, dist2(&self.xs[i], &self.ys[j]));
        }
        let u = arc - self.m * self.n;
        if u < self.m {
            (u, self.root, self.art_cost)
        } else {
            (self.root, u, self.art_cost)
        }
    }

    /// Recompute potentials and depths from the parent structure.
    fn refresh_tree(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        let root = self.root;
        self.pi[root] = 0.0;
        self.depth[root] = 0;
        self.stamp[root] = self.epoch;
        let mut path = Vec::new();
        for start in 0..self.parent.len() {
            let mut u = start;
            while self.stamp[u] != self.epoch {
                path.push(u);
                u = self.parent[u];
            }
            while let Some(v) = path.pop() {
                let p = self.parent[v];
                let (_, _, c) = self.arc(self.pred[v]);
                // tree arcs have zero reduced cost c + pi_tail - pi_head
                self.pi[v] = if self.up[v] {
                    self.pi[p] - c
                } else {
                    self.pi[p] + c
                };
                self.depth[v] = self.depth[p] + 1;
                self.stamp[v] = self.epoch;
            }
        }
    }

    /// Block-search pricing over real arcs; returns the most negative
    /// reduced cost arc of the first block containing a candidate.
    fn find_entering(&mut self, tol: f64) -> Option<usize> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt().ceil() as usize).max(10);
        let mut best: Option<(f64, usize)> = None;
        let mut scanned = 0;
        let mut in_block = 0;
        let mut a = self.next_arc;
        while scanned < total {
            let i = a / self.n;
            let j = a % self.n;
            let rc = dist2(&self.xs[i], &self.ys[j]) + self.pi[i] - self.pi[self.m + j];
            if rc < -tol && best.is_none_or(|(b, _)| rc < b) {
                best = Some((rc, a));
            }
            scanned += 1;
            in_block += 1;
            a += 1;
            if a == total {
                a = 0;
            }
            if in_block == block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        self.next_arc = a;
        best.map(|(_, arc)| arc)
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    fn run(&mut self) -> Result<()> {
        let tol = 1e-12 * self.art_cost.max(1.0);
        let max_pivots = 50 * (self.m * self.n + self.m + self.n) + 1000;
        let mut pivots = 0usize;
        while let Some(in_arc) = self.find_entering(tol) {
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::SolverFailure(format!(
                    "network simplex exceeded {max_pivots} pivots"
                )));
            }
            let (first, second, _) = self.arc(in_arc);
            let apex = self.join(first, second);

            // leaving arc: last blocking arc in cycle order from the apex
            let mut delta = f64::INFINITY;
            let mut u_out = usize::MAX;
            let mut side = 0;
            let mut u = first;
            while u != apex {
                if self.up[u] && self.flow[u] < delta {
                    delta = self.flow[u];
                    u_out = u;
                    side = 1;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != apex {
                if !self.up[u] && self.flow[u] <= delta {
                    delta = self.flow[u];
                    u_out = u;
                    side = 2;
                }
                u = self.parent[u];
            }
            if u_out == usize::MAX {
                return Err(Error::SolverFailure("unbounded cycle".into()));
            }

            if delta > 0.0 {
                let mut u = first;
                while u != apex {
                    if self.up[u] {
                        self.flow[u] -= delta;
                    } else {
                        self.flow[u] += delta;
                    }
                    u = self.parent[u];
                }
                let mut u = second;
                while u != apex {
                    if self.up[u] {
                        self.flow[u] += delta;
                    } else {
                        self.flow[u] -= delta;
                    }
                    u = self.parent[u];
                }
            }

            // re-hang the cut subtree below the entering arc
            let (start, new_parent, start_up) = if side == 1 {
                (first, second, true)
            } else {
                (second, first, false)
            };
            let mut carry_arc = in_arc;
            let mut carry_up = start_up;
            let mut carry_flow = delta;
            let mut carry_parent = new_parent;
            let mut v = start;
            loop {
                let old_parent = self.parent[v];
                let old_arc = self.pred[v];
                let old_up = self.up[v];
                let old_flow = self.flow[v];
                self.parent[v] = carry_parent;
                self.pred[v] = carry_arc;
                self.up[v] = carry_up;
                self.flow[v] = carry_flow;
                if v == u_out {
                    break;
                }
                carry_parent = v;
                carry_arc = old_arc;
                carry_up = !old_up;
                carry_flow = old_flow;
                v = old_parent;
            }
            self.refresh_tree();
        }
        log::debug!("network simplex finished after {pivots} pivots");
        // artificial arcs must be empty at the optimum
        for u in 0..self.root {
            if self.pred[u] >= self.m * self.n && self.flow[u] > 1e-12 {
                return Err(Error::SolverFailure(
                    "artificial arc carries flow at optimum".into(),
                ));
            }
        }
        Ok(())
    }
}
