//! Certify a ball against the shipped calibration threshold.
//!
//! Run with `cargo run --release --example certify`.

use otlab::campanato::IterateConfig;
use otlab::certify::{certify_point, shipped_calibration};
use otlab::measures::Grid;
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::transport::{extract_map, solve_entropic, EntropicOptions};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let r0 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 }), &grid, 0)?;
    let r1 = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: -0.05, frequency: 0.25 }), &grid, 0)?;
    let h = grid.spacing();
    let map = extract_map(&solve_entropic(&r0, &r1, h * h, 100_000, 1e-6, &EntropicOptions::default())?)?;
    let cal = shipped_calibration()?;
    let cfg = IterateConfig { steps: 2, ..Default::default() };
    let cert = certify_point(&map, map.source(), &r1, [0.1, -0.1], 0.25, cal.alpha, cal.eps_cal, &cfg)?;
    println!(
        "{:?}: value {:.3e} vs eps_cal {:.3e} (E {:.3e}, D {:.3e})",
        cert.verdict, cert.hypothesis_value, cert.threshold, cert.excess, cert.data
    );
    if let Some(hd) = &cert.holder {
        println!("alpha_hat {:.3}", hd.alpha_hat);
    }
    Ok(())
}
