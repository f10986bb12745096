//! Boundary flux of the displacement interpolation, the Neumann problem on
//! a ball, and the harmonic jet that drives the tilting step.

mod flux;
mod jet;
mod neumann;

pub use flux::{time_integrated_flux, BoundaryFlux, FluxOptions, Subsample};
pub use jet::{fit_harmonic_jet, FIT_CONDITION_CAP};
pub use neumann::{
    solve_neumann, AngularStencil, HarmonicPotential, Jet, NeumannOptions, PolarGrid, Source,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measures::{mean_over_ball, Ball, GridDensity, ScalarField};

/// Default Neumann radius on the unit ball.
pub const R_NEUMANN: f64 = 0.775;

/// `c = mean over B of (rho0 - rho1)`.
pub fn compatibility_constant(rho0: &GridDensity, rho1: &GridDensity, ball: &Ball) -> Result<f64> {
    if rho0.grid() != rho1.grid() {
        // different grids: the difference of the two means
        return Ok(mean_over_ball(rho0.as_field(), ball)? - mean_over_ball(rho1.as_field(), ball)?);
    }
    let diff: Vec<f64> = rho0
        .values()
        .iter()
        .zip(rho1.values())
        .map(|(a, b)| a - b)
        .collect();
    mean_over_ball(&ScalarField::new(rho0.grid().clone(), diff)?, ball)
}

/// Outcome of [`check_gradient_bound`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBound {
    /// `sup |grad phi|^2 / ||g||^2_inf` over the nodes.
    pub ratio: f64,
    /// Set when `g` vanishes and the ratio is 0 by convention.
    pub zero_data: bool,
}

/// Solve `Delta phi = g` on the ball of `potential` with the constant
/// Neumann datum `(1 / |dB|) int_B g`, and return the ratio of the largest
/// squared gradient to the squared sup norm of `g`.
pub fn check_gradient_bound(potential: &HarmonicPotential, g: Source<'_>) -> Result<GradientBound> {
    let grid = potential.grid;
    let opts = NeumannOptions {
        n_r: grid.n_r,
        n_theta: grid.n_theta.max(8),
        compat_tol: Some(f64::INFINITY),
        ..Default::default()
    };
    // flux datum: the source total spread over the boundary
    let probe = grid;
    let (total, sup) = match g {
        Source::Constant(c) => (c * (0..probe.n_r).map(|i| probe.weight(i)).sum::<f64>() * probe.n_theta as f64, c.abs()),
        Source::Field(f) => {
            let mut total = 0.0;
            let mut sup: f64 = 0.0;
            for i in 0..probe.n_r {
                for j in 0..probe.n_theta {
                    let v = f.sample(&probe.node(i, j)).ok_or_else(|| {
                        crate::error::Error::DomainExceeded("source field does not cover the ball".into())
                    })?;
                    total += probe.weight(i) * v;
                    sup = sup.max(v.abs());
                }
            }
            (total, sup)
        }
    };
    if sup == 0.0 {
        return Ok(GradientBound {
            ratio: 0.0,
            zero_data: true,
        });
    }
    let measure = if grid.dim == 1 { 2.0 } else { std::f64::consts::TAU * grid.ball.radius };
    let n_bins = if grid.dim == 1 { 2 } else { grid.n_theta };
    let flux = BoundaryFlux {
        ball: grid.ball,
        dim: grid.dim,
        values: vec![total / measure; n_bins],
        reference_mass: 0.0,
        tangential: 0,
    };
    let full = solve_neumann(g, &flux, &opts)?;
    // gradient of the full solution: grad phi + (c/d) x
    let d = grid.dim as f64;
    let mut best: f64 = 0.0;
    for i in 0..grid.n_r {
        for j in 0..full.grid.n_theta {
            let o = full.grid.offset(i, j);
            let k = i * full.grid.n_theta + j;
            let gx = full.grad[k][0] + full.c / d * o[0];
            let gy = full.grad[k][1] + full.c / d * o[1];
            best = best.max(gx * gx + gy * gy);
        }
    }
    Ok(GradientBound {
        ratio: best / (sup * sup),
        zero_data: false,
    })
}
