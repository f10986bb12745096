//! Iterated tilting with composed frames and the Hölder estimate.
//!
//! Run with `cargo run --release --example iterate`.

use otlab::campanato::{holder_estimate, iterate, IterateConfig};
use otlab::measures::{Ball, Grid};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::tilt::TiltConfig;
use otlab::transport::{extract_map, solve_entropic, EntropicOptions};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let r0 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 }), &grid, 0)?;
    let r1 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: -0.05, frequency: 0.25 }), &grid, 0)?;
    let h = grid.spacing();
    let map = extract_map(&solve_entropic(&r0, &r1, h * h, 100_000, 1e-6, &EntropicOptions::default())?)?;
    let cfg = IterateConfig { steps: 3, tilt: TiltConfig { theta: 0.5, ..Default::default() }, ..Default::default() };
    let state = iterate(&map, map.source(), &r1, &Ball::centered(1.0)?, &cfg)?;
    print!("{}", state.to_csv());
    let s = state.summary();
    println!("decay exponent {:.3} (target {:.3}), C_frames {:.3}", s.decay_exponent, s.target_exponent, s.c_frames);
    match holder_estimate(&state, &map) {
        Ok(hd) => println!("alpha_hat {:.3}", hd.alpha_hat),
        Err(e) => println!("no Hölder estimate: {e}"),
    }
    Ok(())
}
