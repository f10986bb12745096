//! Solve a transport problem three ways and compare the maps.
//!
//! The exact solver runs on a coarse 1-D problem together with the monotone
//! rearrangement; the entropic solver runs on a 2-D sinusoidal pair.
//!
//! Run with `cargo run --release --example solve`.

use otlab::measures::{Grid, GridDensity};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::transport::{
    extract_map, monotone_1d_oracle, solve_entropic, solve_exact, EntropicOptions, ExactOptions,
};

fn main() -> otlab::Result<()> {
    let line = Grid::new(1, [64, 1], [0.0, 0.0], 1.0 / 64.0)?;
    let r0 = GridDensity::from_fn(line.clone(), |p| 1.0 + 0.5 * (6.0 * p[0]).sin())?;
    let r1 = GridDensity::from_fn(line.clone(), |p| 1.0 + p[0])?;
    let (r1, _) = otlab::measures::equalize_mass(&r0, &r1, 1.0)?;
    let exact = extract_map(&solve_exact(&r0, &r1, &ExactOptions::default())?)?;
    let monotone = monotone_1d_oracle(&r0, &r1)?;
    let gap = (0..line.len())
        .map(|i| (exact.target(i).unwrap()[0] - monotone.target(i).unwrap()[0]).abs())
        .fold(0.0, f64::max);
    println!("1-D: max |T_exact - T_monotone| = {gap:.3e} (h = {:.3e})", line.spacing());

    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 48)?;
    let s0 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.1, frequency: 0.25 }), &grid, 0)?;
    let s1 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: -0.1, frequency: 0.25 }), &grid, 0)?;
    let h = grid.spacing();
    let plan = solve_entropic(&s0, &s1, h * h, 100_000, 1e-6, &EntropicOptions::default())?;
    let map = extract_map(&plan)?;
    let disp = (0..grid.len())
        .map(|i| {
            let (x, t) = (grid.center(i), map.target(i).unwrap());
            (t[0] - x[0]).hypot(t[1] - x[1])
        })
        .fold(0.0, f64::max);
    println!("2-D entropic: cost {:.4e}, max displacement {disp:.3e}", plan.cost());
    Ok(())
}
