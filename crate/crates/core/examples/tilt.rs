//! One tilting step on the unit ball and the resulting frame.
//!
//! Run with `cargo run --release --example tilt`.

use otlab::measures::{Ball, Grid};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::tilt::{tilt_step, TiltConfig};
use otlab::transport::{extract_map, solve_entropic, EntropicOptions};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let r0 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 }), &grid, 0)?;
    let r1 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: -0.05, frequency: 0.25 }), &grid, 0)?;
    let h = grid.spacing();
    let map = extract_map(&solve_entropic(&r0, &r1, h * h, 100_000, 1e-6, &EntropicOptions::default())?)?;
    let cfg = TiltConfig { theta: 0.25, beta: 0.5, ..Default::default() };
    let (_, step) = tilt_step(&map, map.source(), &r1, &Ball::centered(1.0)?, &cfg)?;
    println!("E {:.3e} -> {:.3e}, D {:.3e} -> {:.3e}", step.e_in, step.e_out, step.d_in, step.d_out);
    println!("frame M {:?}, b {:?}, |frame|^2 {:.3e}", step.m, step.b, step.frame_norm);
    println!("implied C_theta {:.3e}", step.implied_c_theta);
    Ok(())
}
