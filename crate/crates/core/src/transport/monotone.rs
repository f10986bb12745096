use std::sync::Arc;

use super::{TransportMap, EXACT_MASS_TOL};
use crate::error::{Error, Result};
use crate::measures::{equalize_mass, GridDensity};

/// Optimal one-dimensional map `F1^-1 o F0`, with `F0` and `F1` the
/// piecewise-linear distribution functions of the cell densities. Evaluated
/// at the source cell centers; cells without mass are left undefined.
pub fn monotone_1d_oracle(rho0: &GridDensity, rho1: &GridDensity) -> Result<TransportMap> {
    if rho0.dim() != 1 || rho1.dim() != 1 {
        return Err(Error::InvalidInput(
            "monotone rearrangement needs one-dimensional densities".into(),
        ));
    }
    let (rho1, _) = equalize_mass(rho0, rho1, EXACT_MASS_TOL)?;
    let g0 = rho0.grid();
    let g1 = rho1.grid();
    let m1 = rho1.cell_masses();
    // cumulative target mass at the left edge of each cell
    let mut edges = Vec::with_capacity(m1.len() + 1);
    let mut acc = 0.0;
    edges.push(0.0);
    for m in &m1 {
        acc += m;
        edges.push(acc);
    }
    let total = acc;
    let h1 = g1.spacing();
    let left1 = g1.origin()[0];

    let inverse_cdf = |u: f64| -> f64 {
        let u = u.clamp(0.0, total);
        // first cell with positive mass whose cumulative range contains u
        let k = edges[1..].partition_point(|&e| e < u).min(m1.len() - 1);
        let mut k = k;
        while k + 1 < m1.len() && m1[k] <= 0.0 {
            k += 1;
        }
        if m1[k] <= 0.0 {
            return left1 + (k as f64 + 0.5) * h1;
        }
        let frac = ((u - edges[k]) / m1[k]).clamp(0.0, 1.0);
        left1 + (k as f64 + frac) * h1
    };

    let n = g0.len();
    let m0 = rho0.cell_masses();
    let mut targets = vec![[0.0, 0.0]; n];
    let mut defined = vec![false; n];
    let mut acc0 = 0.0;
    for i in 0..n {
        if m0[i] > 0.0 {
            targets[i] = [inverse_cdf(acc0 + 0.5 * m0[i]), 0.0];
            defined[i] = true;
        }
        acc0 += m0[i];
    }
    TransportMap::new(Arc::new(rho0.clone()), targets, defined, vec![0.0; n], None)
}
