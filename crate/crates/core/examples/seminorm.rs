//! Campanato seminorm of a smooth map and of a torn map.
//!
//! Run with `cargo run --release --example seminorm`.

use std::sync::Arc;

use otlab::campanato::campanato_seminorm;
use otlab::measures::{Ball, Grid, GridDensity};
use otlab::transport::TransportMap;

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 96)?;
    let h = grid.spacing();
    let rho = Arc::new(GridDensity::uniform(grid.clone(), 1.0)?);
    let smooth = TransportMap::identity(rho.clone());
    let torn = TransportMap::from_fn(rho.clone(), |x| [x[0] + 0.1 * x[0].signum(), x[1]]);
    let domain = Ball::centered(0.6)?;
    for (name, map) in [("identity", &smooth), ("torn", &torn)] {
        let values: Vec<String> = [8.0, 4.0, 2.0]
            .iter()
            .map(|k| campanato_seminorm(map, &domain, 0.9, k * h).map(|s| format!("{:.3}", s.value)))
            .collect::<otlab::Result<_>>()?;
        println!("{name:>8}: seminorm at r_min 8h, 4h, 2h = {}", values.join(", "));
    }
    Ok(())
}
