//! Calibrate the certification threshold on a smooth and a singular case.
//!
//! Run with `cargo run --release --example calibrate`.

use otlab::certify::{calibrate, scan_table, CalibrateOptions, CalibrationCase};
use otlab::cli::bad_set;
use otlab::measures::{Ball, Grid};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::transport::{extract_map, solve_entropic, EntropicOptions};

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 96)?;
    let h = grid.spacing();
    let uniform = synth_density(&SynthSpec::new(Family::Uniform), &grid, 0)?;
    let smooth = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 }), &grid, 0)?;
    let mut slit = SynthSpec::new(Family::Slit { width: 8.0 * h, shoulder: 4.0 * h, half_length: 0.3, angle: 0.0, center: [-0.3, 0.0] });
    slit.floor = 0.0;
    let slit = synth_density(&slit, &grid, 0)?;
    let domain = Ball::centered(0.5)?;
    let ladder = [0.3, 0.25];
    let mut cases = Vec::new();
    for (name, target, singular) in [("smooth", &smooth, false), ("slit", &slit, true)] {
        let (target, _) = otlab::measures::equalize_mass(&uniform, target, 1e-3)?;
        let map = extract_map(&solve_entropic(&uniform, &target, h * h, 100_000, 1e-6, &EntropicOptions::default())?)?;
        cases.push(CalibrationCase {
            name: name.into(),
            table: scan_table(&map, &uniform, &target, &domain, &ladder)?,
            rho0: uniform.clone(),
            bad: singular.then(|| bad_set(&uniform, &target, 0.0)),
        });
    }
    let cal = calibrate(&cases, 0.5, &CalibrateOptions::default())?;
    println!(
        "eps_cal {:.3e} from coverage bound {:.3e} and false-pass bound {:.3e} (feasible: {})",
        cal.eps_cal, cal.eps_coverage, cal.eps_false_pass, cal.feasible
    );
    for c in &cal.cases {
        println!("{:>8}: coverage {:.3}, false passes {}", c.name, c.coverage, c.false_passes);
    }
    Ok(())
}
