//! Experiment configuration: a TOML file with one section per concern.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! n = 64
//! half_width = 1.25
//!
//! [source]
//! family = "sinusoidal"
//! delta = 0.05
//! frequency = 0.25
//!
//! [target]
//! file = "rho1.csv"
//!
//! [solver]
//! kind = "entropic"
//!
//! [scan]
//! radius = 0.6
//! ladder = [0.32]
//! ```
//!
//! Every section is optional. Relative file paths are resolved against the
//! directory of the configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campanato::IterateConfig;
use crate::certify::CalibrateOptions;
use crate::error::{Error, Result};
use crate::measures::{read_csv_density, read_pgm_density, Ball, Grid, GridDensity, PgmRange};
use crate::numerics::Point;
use crate::synth::{synth_density, SynthSpec};
use crate::tilt::TiltConfig;
use crate::transport::{
    extract_map, monotone_1d_oracle, solve_entropic, solve_exact, EntropicOptions, ExactOptions, TransportMap,
};

/// Version string embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    /// Cells per axis.
    pub n: usize,
    pub half_width: f64,
    pub center: Point,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { dim: 2, n: 64, half_width: 1.25, center: [0.0, 0.0] }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::covering(self.dim, self.center, self.half_width, self.n)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }
}

/// A density read from a file (`.csv` or `.pgm`) or generated from a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    File {
        file: PathBuf,
        /// Density values of pixel intensities 0 and maxval (PGM only).
        #[serde(default = "default_pgm_range")]
        range: [f64; 2],
    },
    Synth(SynthSpec),
}

fn default_pgm_range() -> [f64; 2] {
    [0.0, 1.0]
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec::Synth(SynthSpec::new(crate::synth::Family::Uniform))
    }
}

impl DensitySpec {
    /// Load or generate the density on `grid`. PGM images take the grid's
    /// origin and spacing; CSV files carry their own geometry, which must
    /// match `grid`.
    pub fn load(&self, grid: &Grid, base: &Path, seed: u64) -> Result<GridDensity> {
        match self {
            DensitySpec::Synth(spec) => synth_density(spec, grid, seed),
            DensitySpec::File { file, range } => {
                let path = base.join(file);
                if !path.exists() {
                    return Err(Error::Config(format!("density file {} does not exist", path.display())));
                }
                let rho = match path.extension().and_then(|e| e.to_str()) {
                    Some("csv") => read_csv_density(&path)?,
                    Some("pgm") => {
                        read_pgm_density(&path, grid.origin(), grid.spacing(), PgmRange { min: range[0], max: range[1] })?
                    }
                    _ => return Err(Error::Config(format!("unknown density format: {}", path.display()))),
                };
                if rho.grid() != grid {
                    return Err(Error::Config(format!("{} does not match the configured grid", path.display())));
                }
                Ok(rho)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Entropic,
    /// Quantile matching; one-dimensional grids only.
    Monotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// Entropic regularization; defaults to `h^2`.
    pub reg: Option<f64>,
    pub max_iter: usize,
    /// Relative L1 marginal tolerance of the entropic solver.
    pub tol: f64,
    /// Relative mass mismatch accepted before renormalizing the target.
    pub mass_tol: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { kind: SolverKind::Entropic, reg: None, max_iter: 100_000, tol: 1e-6, mass_tol: None }
    }
}

impl SolverSpec {
    pub fn solve(&self, rho0: &GridDensity, rho1: &GridDensity) -> Result<TransportMap> {
        match self.kind {
            SolverKind::Exact => {
                let mut opts = ExactOptions::default();
                if let Some(t) = self.mass_tol {
                    opts.mass_tol = t;
                }
                extract_map(&solve_exact(rho0, rho1, &opts)?)
            }
            SolverKind::Entropic => {
                let h = rho0.grid().spacing();
                let mut opts = EntropicOptions::default();
                if let Some(t) = self.mass_tol {
                    opts.mass_tol = t;
                }
                extract_map(&solve_entropic(rho0, rho1, self.reg.unwrap_or(h * h), self.max_iter, self.tol, &opts)?)
            }
            SolverKind::Monotone => {
                if rho0.dim() != 1 {
                    return Err(Error::Config("the monotone solver needs a one-dimensional grid".into()));
                }
                let (rho1, _) = crate::measures::equalize_mass(rho0, rho1, self.mass_tol.unwrap_or(1e-6))?;
                monotone_1d_oracle(rho0, &rho1)
            }
        }
    }
}

/// Grid, marginals and solver of one transport problem.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Instance {
    pub grid: GridSpec,
    pub source: DensitySpec,
    pub target: DensitySpec,
    pub solver: SolverSpec,
}

/// A loaded instance: both marginals and the solved map.
#[derive(Clone, Debug)]
pub struct Problem {
    pub rho0: Arc<GridDensity>,
    pub rho1: Arc<GridDensity>,
    pub map: TransportMap,
}

impl Instance {
    /// Load both marginals; the target uses `seed + 1` so that noise is
    /// independent between them.
    pub fn marginals(&self, base: &Path, seed: u64) -> Result<(GridDensity, GridDensity)> {
        let grid = self.grid.build()?;
        let rho0 = self.source.load(&grid, base, seed)?;
        let rho1 = self.target.load(&grid, base, seed.wrapping_add(1))?;
        Ok((rho0, rho1))
    }

    /// Load the marginals and solve. The target is renormalized to the
    /// source mass within the solver's tolerance.
    pub fn solve(&self, base: &Path, seed: u64) -> Result<Problem> {
        let (rho0, rho1) = self.marginals(base, seed)?;
        let tol = self.solver.mass_tol.unwrap_or(match self.solver.kind {
            SolverKind::Entropic => crate::transport::ENTROPIC_MASS_TOL,
            _ => crate::transport::EXACT_MASS_TOL,
        });
        let (rho1, _) = crate::measures::equalize_mass(&rho0, &rho1, tol)?;
        let map = self.solver.solve(&rho0, &rho1)?;
        let rho0 = map.source().clone();
        Ok(Problem { rho0, rho1: Arc::new(rho1), map })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallSpec {
    pub center: Point,
    pub radius: f64,
}

impl Default for BallSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 0.5 }
    }
}

impl BallSpec {
    pub fn ball(&self) -> Result<Ball> {
        Ball::new(self.center, self.radius)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateSection {
    pub steps: usize,
    pub alpha: f64,
    pub floor_cells: f64,
}

impl Default for IterateSection {
    fn default() -> Self {
        let d = IterateConfig::default();
        Self { steps: d.steps, alpha: d.alpha, floor_cells: d.floor_cells }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeminormSection {
    pub center: Point,
    /// Radius of the domain ball.
    pub radius: f64,
    pub alpha: f64,
    /// Smallest radius; defaults to two cells.
    pub r_min: Option<f64>,
}

impl Default for SeminormSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 0.8, alpha: 0.5, r_min: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub center: Point,
    pub radius: f64,
    pub alpha: f64,
    /// Threshold; defaults to the shipped calibration.
    pub eps_cal: Option<f64>,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 0.25, alpha: 0.5, eps_cal: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub center: Point,
    /// Radius of the scanned domain.
    pub radius: f64,
    /// Descending radii, each at least eight cells.
    pub ladder: Vec<f64>,
    pub alpha: f64,
    pub eps_cal: Option<f64>,
    /// Also write the per-cell CSV raster.
    pub raster: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 0.6, ladder: vec![0.32], alpha: 0.5, eps_cal: None, raster: true }
    }
}

/// One calibration instance. Singular cases declare their bad set as the
/// zero-density cells of either marginal, dilated by `bad_margin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCaseSpec {
    pub name: String,
    #[serde(default)]
    pub singular: bool,
    #[serde(default)]
    pub bad_margin: f64,
    #[serde(flatten)]
    pub instance: Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub center: Point,
    pub radius: f64,
    pub ladder: Vec<f64>,
    pub alpha: f64,
    pub coverage_target: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    pub cases: Vec<CalibrationCaseSpec>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let o = CalibrateOptions::default();
        Self {
            center: [0.0, 0.0],
            radius: 0.6,
            ladder: vec![0.32],
            alpha: 0.5,
            coverage_target: o.coverage_target,
            lo: o.lo,
            hi: o.hi,
            iterations: o.iterations,
            cases: Vec::new(),
        }
    }
}

impl CalibrateSection {
    pub fn options(&self) -> CalibrateOptions {
        CalibrateOptions { coverage_target: self.coverage_target, lo: self.lo, hi: self.hi, iterations: self.iterations }
    }
}

/// The whole experiment configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub grid: GridSpec,
    pub source: DensitySpec,
    pub target: DensitySpec,
    pub solver: SolverSpec,
    pub ball: BallSpec,
    pub tilt: TiltConfig,
    pub iterate: IterateSection,
    pub seminorm: SeminormSection,
    pub certify: CertifySection,
    pub scan: ScanSection,
    pub calibrate: CalibrateSection,
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        open_unit("tilt.theta", self.tilt.theta)?;
        open_unit("tilt.beta", self.tilt.beta)?;
        open_unit("iterate.alpha", self.iterate.alpha)?;
        open_unit("seminorm.alpha", self.seminorm.alpha)?;
        open_unit("certify.alpha", self.certify.alpha)?;
        open_unit("scan.alpha", self.scan.alpha)?;
        if self.iterate.steps < 1 {
            return Err(Error::Config("iterate.steps must be at least 1".into()));
        }
        if self.ball.radius <= 0.0 || self.certify.radius <= 0.0 || self.scan.radius <= 0.0 || self.seminorm.radius <= 0.0 {
            return Err(Error::Config("radii must be positive".into()));
        }
        Ok(())
    }

    pub fn instance(&self) -> Instance {
        Instance {
            grid: self.grid.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
            solver: self.solver.clone(),
        }
    }

    pub fn iterate_config(&self) -> IterateConfig {
        IterateConfig {
            tilt: self.tilt.clone(),
            steps: self.iterate.steps,
            alpha: self.iterate.alpha,
            floor_cells: self.iterate.floor_cells,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Family;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.tilt.theta, 0.25);
    }

    #[test]
    fn sections_parse() {
        let c = Config::from_toml(
            r#"
seed = 3
[grid]
n = 32
[source]
family = "sinusoidal"
delta = 0.05
frequency = 0.25
[target]
file = "rho1.csv"
[tilt]
theta = 0.5
[tilt.flux]
n_bins = 32
[scan]
ladder = [0.4, 0.32]
"#,
        )
        .unwrap();
        assert_eq!(c.grid.n, 32);
        assert_eq!(c.source, DensitySpec::Synth(SynthSpec::new(Family::Sinusoidal { delta: 0.05, frequency: 0.25 })));
        assert!(matches!(c.target, DensitySpec::File { .. }));
        assert_eq!(c.tilt.flux.n_bins, 32);
        assert_eq!(c.scan.ladder, vec![0.4, 0.32]);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in ["[tilt]\ntheta = 1.5", "[iterate]\nsteps = 0", "[grid]\nbogus = 1", "[source]\nfamily = \"spiral\""] {
            assert!(matches!(Config::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::from_toml("seed = 1").unwrap();
        let b = Config::from_toml("seed  =  1\n").unwrap();
        let c = Config::from_toml("seed = 2").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_file_is_reported() {
        let c = Config::from_toml("[source]\nfile = \"nope.csv\"").unwrap();
        let err = c.instance().marginals(Path::new("/nonexistent"), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
