use std::sync::Arc;

use otlab::campanato::campanato_seminorm;
use otlab::certify::scan_table;
use otlab::config::Config;
use otlab::measures::{Ball, Grid, GridDensity};
use otlab::poisson::{time_integrated_flux, FluxOptions, Subsample};
use otlab::synth::{synth_density, Family, SynthSpec};
use otlab::transport::TransportMap;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn grid(n: usize) -> Grid {
    Grid::covering(2, [0.0, 0.0], 1.25, n).unwrap()
}

fn fingerprint(rho: &GridDensity) -> String {
    let mut h = Sha256::new();
    for v in rho.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[test]
fn sinusoid_fixture_is_frozen() {
    let g = grid(64);
    let rho = synth_density(&SynthSpec::new(Family::Sinusoidal { delta: 0.1, frequency: 2.0 }), &g, 0).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    for (i, v) in rho.values().iter().enumerate() {
        let x = g.center(i);
        let want = 1.0 + 0.1 * (tau * 2.0 * x[0]).sin() * (tau * 2.0 * x[1]).sin();
        assert!((v - want).abs() <= 1e-14, "cell {i}: {v} vs {want}");
    }
    assert_eq!(fingerprint(&rho), "218e1e2a592746222183ebd55353d70797635ca191dede5b4daffb590fe430fd");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synth_is_deterministic_in_the_seed(seed in 0u64..1000, delta in 0.0f64..0.4, noise in 0.001f64..0.1) {
        let mut spec = SynthSpec::new(Family::Sinusoidal { delta, frequency: 0.5 });
        spec.noise = noise;
        let g = grid(24);
        let a = synth_density(&spec, &g, seed).unwrap();
        let b = synth_density(&spec, &g, seed).unwrap();
        let c = synth_density(&spec, &g, seed + 1).unwrap();
        prop_assert_eq!(a.values(), b.values());
        prop_assert_ne!(a.values(), c.values());
    }

    #[test]
    fn config_hash_tracks_content(seed in 0u64..10_000, n in 8usize..200) {
        let text = format!("seed = {seed}\n[grid]\nn = {n}\n");
        let a = Config::from_toml(&text).unwrap();
        let b = Config::from_toml(&text).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        let c = Config::from_toml(&format!("seed = {}\n[grid]\nn = {n}\n", seed + 1)).unwrap();
        prop_assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seminorm_scales_quadratically_and_ignores_shifts(
        m in prop::array::uniform4(-1.0f64..1.0),
        b in prop::array::uniform2(-0.5f64..0.5),
        s in 0.2f64..3.0,
        alpha in 0.1f64..0.9,
    ) {
        let g = grid(64);
        let rho = Arc::new(GridDensity::uniform(g.clone(), 1.0).unwrap());
        let lin = |x: [f64; 2]| [m[0] * x[0] + m[1] * x[1], m[2] * x[0] + m[3] * x[1]];
        let base = TransportMap::from_fn(rho.clone(), lin);
        let moved = TransportMap::from_fn(rho.clone(), |x| {
            let y = lin(x);
            [s * y[0] + b[0], s * y[1] + b[1]]
        });
        let domain = Ball::centered(0.6).unwrap();
        let r_min = 4.0 * g.spacing();
        let v0 = campanato_seminorm(&base, &domain, alpha, r_min).unwrap().value;
        let v1 = campanato_seminorm(&moved, &domain, alpha, r_min).unwrap().value;
        prop_assert!((v1 - s * s * v0).abs() <= 1e-9 * (1.0 + v1.abs()), "{} vs {}", v1, s * s * v0);
    }

    #[test]
    fn net_flux_is_the_mass_balance(
        a in prop::array::uniform3(-0.3f64..0.3),
        c in prop::array::uniform2(-0.3f64..0.3),
        r in 0.3f64..0.9,
        seed in 0u64..100,
    ) {
        let g = grid(32);
        let mut spec = SynthSpec::new(Family::Bump { delta: 0.5, width: 0.4, center: [0.1, 0.0] });
        spec.noise = 0.1;
        let rho = Arc::new(synth_density(&spec, &g, seed).unwrap());
        let map = TransportMap::from_fn(rho.clone(), |x| {
            [x[0] + a[0] * (2.0 * x[1]).sin() + a[2], x[1] + a[1] * x[0] * x[0] - a[2]]
        });
        let ball = Ball::new(c, r).unwrap();
        let opts = FluxOptions { subsample: Subsample::Centers, ..Default::default() };
        let flux = time_integrated_flux(&map, &rho, &ball, &opts).unwrap();
        let pushed: f64 = (0..g.len())
            .filter(|&i| ball.contains(&map.target(i).unwrap()))
            .map(|i| rho.cell_mass(i))
            .sum();
        let expect = rho.mass_in(&ball) - pushed;
        prop_assert!((flux.net() - expect).abs() <= 1e-9 * rho.mass(), "{} vs {}", flux.net(), expect);
    }
}

#[test]
fn coverage_is_monotone_in_the_threshold() {
    let g = grid(128);
    let rho0 = Arc::new(GridDensity::uniform(g.clone(), 1.0).unwrap());
    let rho1 = GridDensity::from_fn(g.clone(), |p| 1.0 + 0.3 * (3.0 * p[0]).sin() * p[1]).unwrap();
    let map = TransportMap::from_fn(rho0.clone(), |x| [x[0] + 0.05 * (4.0 * x[1]).sin(), x[1] + 0.2 * x[0] * x[0].abs()]);
    let table = scan_table(&map, &rho0, &rho1, &Ball::centered(0.4).unwrap(), &[0.2, 0.16]).unwrap();
    proptest!(ProptestConfig::with_cases(64), |(e1 in -8.0f64..0.0, e2 in -8.0f64..0.0)| {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = table.certify(&rho0, 10f64.powf(lo), 0.5);
        let b = table.certify(&rho0, 10f64.powf(hi), 0.5);
        prop_assert!(a.coverage <= b.coverage);
        for (x, y) in a.raster.iter().zip(&b.raster) {
            prop_assert!(*x != 1 || *y == 1);
        }
    });
}
