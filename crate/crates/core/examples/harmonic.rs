//! Boundary flux of a transport map and the Neumann harmonic approximation.
//!
//! Run with `cargo run --release --example harmonic`.

use otlab::excess::excess_energy;
use otlab::measures::{Ball, Grid};
use otlab::poisson::{
    compatibility_constant, solve_neumann, time_integrated_flux, FluxOptions, NeumannOptions, Source, R_NEUMANN,
};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::transport::{extract_map, solve_entropic, EntropicOptions};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let r0 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 }), &grid, 0)?;
    let r1 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: -0.05, frequency: 0.25 }), &grid, 0)?;
    let h = grid.spacing();
    let map = extract_map(&solve_entropic(&r0, &r1, h * h, 100_000, 1e-6, &EntropicOptions::default())?)?;

    let ball = Ball::centered(R_NEUMANN)?;
    let flux = time_integrated_flux(&map, &r0, &ball, &FluxOptions::default())?;
    println!("net flux {:.6e}, mass defect {:.6e}", flux.net(), r0.mass_in(&ball) - r1.mass_in(&ball));

    let c = compatibility_constant(&r0, &r1, &ball)?;
    let phi = solve_neumann(Source::Constant(c), &flux, &NeumannOptions::default())?;
    let inner = Ball::centered(0.5)?;
    let mut residual = 0.0;
    for i in grid.cells_in(&inner) {
        let x = grid.center(i);
        let (t, g) = (map.target(i).unwrap(), phi.grad_phi(&x).unwrap());
        residual += ((t[0] - x[0] - g[0]).powi(2) + (t[1] - x[1] - g[1]).powi(2)) * r0.values()[i] * h * h;
    }
    let jet = phi.jet();
    println!("source constant {c:.3e}; jet b {:?}, A {:?}", jet.b, jet.a);
    println!("|T - x - grad phi|^2 on B_0.5: {residual:.3e}, excess on B_0.5: {:.3e}", excess_energy(&map, &r0, &inner)?);
    Ok(())
}
