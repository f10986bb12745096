//! Excess energy and data term of a translation on nested balls.
//!
//! Run with `cargo run --release --example excess`.

use std::sync::Arc;

use otlab::excess::{hypothesis_quantity, wasserstein_to_uniform};
use otlab::measures::{Ball, Grid, GridDensity};
use otlab::transport::TransportMap;

fn main() -> otlab::Result<()> {
    let grid = Grid::covering(2, [0.0, 0.0], 1.25, 64)?;
    let rho = Arc::new(GridDensity::uniform(grid.clone(), 1.0)?);
    let v = [0.1, 0.0];
    let map = TransportMap::from_fn(rho.clone(), |x| [x[0] + v[0], x[1] + v[1]]);
    for r in [0.25, 0.5, 1.0] {
        let q = hypothesis_quantity(&map, &rho, &rho, &Ball::centered(r)?)?;
        println!("R {r:.2}: E {:.5} (|v|^2/R^2 = {:.5}), D {:.2e}", q.excess, 0.01 / (r * r), q.data);
    }
    let w = wasserstein_to_uniform(&rho, &Ball::centered(0.5)?)?;
    println!("uniform density: W2 distance to uniform on B_0.5 {:.2e}", w.total());
    Ok(())
}
