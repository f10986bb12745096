//! Generate the built-in density families and print their mass and range.
//!
//! Run with `cargo run --release --example synth`.

use otlab::measures::Grid;
use otlab::synth::{synth_density, Family, SynthSpec};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let families = [
        ("uniform", Family::Uniform),
        ("sinusoidal", Family::Sinusoidal { delta: 0.1, frequency: 0.25 }),
        ("bump", Family::Bump { delta: 0.5, width: 0.3, center: [0.2, -0.1] }),
        (
            "jump",
            Family::Jump { delta: 0.3, angle: 0.0, offset: 0.0, width: f64::INFINITY, half_length: f64::INFINITY },
        ),
        ("slit", Family::Slit { width: 0.2, shoulder: 0.1, half_length: 0.25, angle: 0.0, center: [0.0, 0.0] }),
    ];
    for (name, family) in families {
        let mut spec = SynthSpec::new(family);
        if name == "slit" {
            spec.floor = 0.0;
        }
        let rho = synth_density(&spec, &grid, 7)?;
        let (lo, hi) = rho.values().iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{name:>10}: mass {:.6}, min {lo:.3}, max {hi:.3}", rho.mass());
    }
    Ok(())
}
