//! Scan a domain for certified balls on a pair with a slit in the target.
//!
//! Run with `cargo run --release --example scan`.

use std::path::Path;

use otlab::certify::{scan_regular_set, shipped_calibration};
use otlab::config::Config;
use otlab::measures::Ball;

fn main() -> otlab::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/slit.toml");
    let cfg = Config::load(&path)?;
    let p = cfg.instance().solve(path.parent().unwrap(), cfg.seed)?;
    let eps = shipped_calibration()?.eps_cal;
    let s = &cfg.scan;
    let report = scan_regular_set(&p.map, &p.rho0, &p.rho1, &Ball::new(s.center, s.radius)?, s.alpha, &s.ladder, eps)?;
    println!("eps_cal {eps:.3e}: {} certified balls, coverage {:.3}", report.certified().len(), report.coverage);
    let rows = p.rho0.grid().shape()[1];
    let cols = p.rho0.grid().shape()[0];
    for j in (0..rows).rev().step_by(4) {
        let line: String = (0..cols)
            .step_by(2)
            .map(|i| match report.raster[j * cols + i] {
                1 => '#',
                0 => '.',
                _ => ' ',
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
