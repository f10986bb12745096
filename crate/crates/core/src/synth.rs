//! Synthetic density families used as test instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Grid, GridDensity};
use crate::numerics::Point;

/// Lower clip applied to every family unless overridden.
pub const DEFAULT_FLOOR: f64 = 0.1;

/// A density `1 + perturbation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Uniform,
    /// `delta * prod_i sin(2 pi f x_i)`.
    Sinusoidal { delta: f64, frequency: f64 },
    /// `delta * exp(-|x - center|^2 / (2 width^2))`.
    Bump {
        delta: f64,
        width: f64,
        #[serde(default)]
        center: Point,
    },
    /// `delta` on the band of the given `width` around a line (a segment
    /// when `half_length` is set). The line has unit normal at `angle` and
    /// passes at signed distance `offset` from the origin.
    Jump {
        delta: f64,
        #[serde(default)]
        angle: f64,
        #[serde(default)]
        offset: f64,
        /// Band width; infinite means a half-plane jump.
        #[serde(default = "infinite")]
        width: f64,
        #[serde(default = "infinite")]
        half_length: f64,
    },
    /// Zero density on a slit of the given `width` and mass-neutral
    /// shoulders of width `shoulder` on both sides carrying the removed mass.
    /// The slit is centered at `center` with unit normal at `angle`.
    Slit {
        width: f64,
        shoulder: f64,
        half_length: f64,
        #[serde(default)]
        angle: f64,
        #[serde(default)]
        center: Point,
    },
}

fn infinite() -> f64 {
    f64::INFINITY
}

/// A family plus clipping and optional seeded cell noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Amplitude of independent uniform noise in `[-noise, noise]` per cell.
    #[serde(default)]
    pub noise: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl SynthSpec {
    pub fn new(family: Family) -> Self {
        Self { family, floor: DEFAULT_FLOOR, noise: 0.0 }
    }
}

impl Family {
    /// Perturbation at `p` before clipping.
    pub fn perturbation(&self, dim: usize, p: &Point) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            Family::Uniform => 0.0,
            Family::Sinusoidal { delta, frequency } => {
                let s = (TAU * frequency * p[0]).sin();
                if dim == 1 {
                    delta * s
                } else {
                    delta * s * (TAU * frequency * p[1]).sin()
                }
            }
            Family::Bump { delta, width, center } => {
                let dx = p[0] - center[0];
                let dy = if dim == 1 { 0.0 } else { p[1] - center[1] };
                delta * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
            }
            Family::Jump { delta, angle, offset, width, half_length } => {
                let (n, t) = if dim == 1 {
                    ([1.0, 0.0], [0.0, 0.0])
                } else {
                    ([angle.cos(), angle.sin()], [-angle.sin(), angle.cos()])
                };
                let s = p[0] * n[0] + p[1] * n[1] - offset;
                let along = p[0] * t[0] + p[1] * t[1];
                let inside = if width.is_finite() { s.abs() <= 0.5 * width } else { s >= 0.0 };
                if inside && along.abs() <= half_length {
                    delta
                } else {
                    0.0
                }
            }
            Family::Slit { width, shoulder, half_length, angle, center } => {
                let (s, along) = if dim == 1 {
                    (p[0] - center[0], 0.0)
                } else {
                    let d = [p[0] - center[0], p[1] - center[1]];
                    (d[0] * angle.cos() + d[1] * angle.sin(), -d[0] * angle.sin() + d[1] * angle.cos())
                };
                if along.abs() > half_length || s.abs() > 0.5 * width + shoulder {
                    0.0
                } else if s.abs() <= 0.5 * width {
                    -1.0
                } else {
                    0.5 * width / shoulder
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match *self {
            Family::Uniform => None,
            Family::Sinusoidal { delta, frequency } => {
                (!delta.is_finite() || !(frequency > 0.0)).then_some("sinusoidal needs finite delta and frequency > 0")
            }
            Family::Bump { delta, width, .. } => {
                (!delta.is_finite() || !(width > 0.0)).then_some("bump needs finite delta and width > 0")
            }
            Family::Jump { delta, width, half_length, .. } => {
                (!delta.is_finite() || !(width > 0.0) || !(half_length > 0.0))
                    .then_some("jump needs finite delta, width > 0 and half_length > 0")
            }
            Family::Slit { width, shoulder, half_length, .. } => {
                (!(width > 0.0) || !(shoulder > 0.0) || !(half_length > 0.0) || !half_length.is_finite())
                    .then_some("slit needs width, shoulder and finite half_length > 0")
            }
        };
        bad.map_or(Ok(()), |m| Err(Error::Config(m.into())))
    }
}

/// Sample `spec` at the cell centers of `grid`. Deterministic in
/// `(spec, grid, seed)`; the seed only drives the optional noise.
pub fn synth_density(spec: &SynthSpec, grid: &Grid, seed: u64) -> Result<GridDensity> {
    spec.family.validate()?;
    if !(spec.floor >= 0.0) || !(spec.noise >= 0.0) {
        return Err(Error::Config("floor and noise must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let values = grid
        .centers()
        .map(|p| {
            let noise = if spec.noise > 0.0 { rng.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
            (1.0 + spec.family.perturbation(dim, &p) + noise).max(spec.floor)
        })
        .collect();
    GridDensity::new(grid.clone(), values)
}

/// Parse a family name as used on the command line and in configs.
pub fn family_from_name(name: &str, params: &[f64]) -> Result<Family> {
    let p = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
    match name {
        "uniform" => Ok(Family::Uniform),
        "sinusoidal" => Ok(Family::Sinusoidal { delta: p(0, 0.05), frequency: p(1, 1.0) }),
        "bump" => Ok(Family::Bump { delta: p(0, 0.05), width: p(1, 0.2), center: [0.0, 0.0] }),
        "jump" => Ok(Family::Jump {
            delta: p(0, 0.5),
            angle: p(1, 0.0),
            offset: p(2, 0.0),
            width: f64::INFINITY,
            half_length: f64::INFINITY,
        }),
        other => Err(Error::Config(format!("unknown density family '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::covering(2, [0.0, 0.0], 1.25, 32).unwrap()
    }

    #[test]
    fn flat_families() {
        let g = grid();
        for f in [Family::Uniform, Family::Sinusoidal { delta: 0.0, frequency: 2.0 }] {
            let r = synth_density(&SynthSpec::new(f), &g, 7).unwrap();
            assert!(r.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn clipping_and_determinism() {
        let g = grid();
        let spec = SynthSpec { noise: 0.2, ..SynthSpec::new(Family::Bump { delta: -2.0, width: 0.3, center: [0.0, 0.0] }) };
        let a = synth_density(&spec, &g, 3).unwrap();
        let b = synth_density(&spec, &g, 3).unwrap();
        let c = synth_density(&spec, &g, 4).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        assert!(a.values().iter().all(|&v| v >= DEFAULT_FLOOR));
    }

    #[test]
    fn segment_band() {
        let f = Family::Jump { delta: -1.0, angle: 0.0, offset: 0.0, width: 0.1, half_length: 0.4 };
        assert_eq!(f.perturbation(2, &[0.0, 0.3]), -1.0);
        assert_eq!(f.perturbation(2, &[0.0, 0.5]), 0.0);
        assert_eq!(f.perturbation(2, &[0.06, 0.0]), 0.0);
    }

    #[test]
    fn slit_is_mass_neutral_across_each_line() {
        let f = Family::Slit { width: 0.2, shoulder: 0.1, half_length: 0.3, angle: 0.0, center: [0.5, 0.0] };
        assert_eq!(f.perturbation(2, &[0.5, 0.2]), -1.0);
        assert_eq!(f.perturbation(2, &[0.35, 0.2]), 1.0);
        assert_eq!(f.perturbation(2, &[0.5, 0.35]), 0.0);
        let n = 4000;
        let total: f64 = (0..n).map(|i| f.perturbation(2, &[(i as f64 + 0.5) / n as f64, 0.1])).sum::<f64>() / n as f64;
        assert!(total.abs() < 1e-3);
    }

    #[test]
    fn unknown_family_is_a_config_error() {
        assert!(matches!(family_from_name("spiral", &[]), Err(Error::Config(_))));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 2.0 });
        let s = toml::to_string(&spec).unwrap();
        assert!(s.contains("family = \"sinusoidal\""));
        assert_eq!(toml::from_str::<SynthSpec>(&s).unwrap(), spec);
    }
}
