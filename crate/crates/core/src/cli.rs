//! Subcommand orchestration behind the `otlab` binary.
//!
//! Each subcommand loads the configured instance, runs one operation and
//! writes its artifacts into the output directory. JSON artifacts are
//! wrapped in an [`Envelope`]; CSV artifacts start with a `#` comment line
//! carrying the same provenance.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::campanato::{campanato_seminorm, iterate};
use crate::certify::{calibrate, certify_point, scan_table, shipped_calibration, CalibrationCase, Verdict};
use crate::config::{Config, Problem, VERSION};
use crate::error::{Error, Result};
use crate::excess::hypothesis_quantity;
use crate::measures::{Ball, GridDensity};
use crate::tilt::tilt_step;
use crate::transport::monotone_tol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Excess,
    Tilt,
    Iterate,
    Seminorm,
    Certify,
    Scan,
    Calibrate,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Solve,
        Command::Excess,
        Command::Tilt,
        Command::Iterate,
        Command::Seminorm,
        Command::Certify,
        Command::Scan,
        Command::Calibrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Excess => "excess",
            Command::Tilt => "tilt",
            Command::Iterate => "iterate",
            Command::Seminorm => "seminorm",
            Command::Certify => "certify",
            Command::Scan => "scan",
            Command::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subcommand '{s}'")))
    }
}

/// Provenance wrapper of every JSON artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub otlab_version: String,
    pub config_hash: String,
    pub command: Command,
    pub seed: u64,
    pub result: T,
}

/// Machine-readable error report written to stderr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorReport {
    pub fn new(e: &Error) -> Self {
        Self { error: e.kind().into(), message: e.to_string(), exit_code: exit_code(e) }
    }
}

/// 2 for input errors, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

/// A configured run: the config, where relative paths resolve, and where
/// artifacts go.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: Config,
    pub base: PathBuf,
    pub out: PathBuf,
    pub hash: String,
}

impl Run {
    /// `seed` overrides the configured seed before hashing.
    pub fn new(mut config: Config, base: &Path, out: &Path, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            config.seed = s;
        }
        let hash = config.hash();
        Self { config, base: base.to_path_buf(), out: out.to_path_buf(), hash }
    }

    fn envelope<T: Serialize>(&self, command: Command, result: T) -> Envelope<T> {
        Envelope {
            otlab_version: VERSION.into(),
            config_hash: self.hash.clone(),
            command,
            seed: self.config.seed,
            result,
        }
    }

    fn write_json<T: Serialize>(&self, command: Command, name: &str, result: T) -> Result<PathBuf> {
        let path = self.out.join(name);
        let mut text = serde_json::to_string_pretty(&self.envelope(command, result))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, format!("# otlab {VERSION} config {}\n{body}", self.hash))?;
        Ok(path)
    }

    fn problem(&self) -> Result<Problem> {
        self.config.instance().solve(&self.base, self.config.seed)
    }

    fn eps_cal(&self, configured: Option<f64>) -> Result<f64> {
        match configured {
            Some(e) => Ok(e),
            None => Ok(shipped_calibration()?.eps_cal),
        }
    }

    /// Run `command` and return its one-line summary.
    pub fn execute(&self, command: Command) -> Result<String> {
        std::fs::create_dir_all(&self.out)?;
        let cfg = &self.config;
        match command {
            Command::Solve => {
                let p = self.problem()?;
                let grid = p.rho0.grid();
                let report = SolveReport {
                    cells: grid.len(),
                    spacing: grid.spacing(),
                    max_spread: p.map.max_spread(),
                    skipped: p.map.skipped().len(),
                    monotonicity: p.map.monotonicity_violation(Some(cfg.tilt.monotone_pairs)) / monotone_tol(grid),
                };
                self.write_csv("map.csv", &p.map.to_csv())?;
                self.write_json(command, "solve.json", &report)?;
                Ok(format!("solve: {} cells, max spread {:.3e}", report.cells, report.max_spread))
            }
            Command::Excess => {
                let p = self.problem()?;
                let r = hypothesis_quantity(&p.map, &p.rho0, &p.rho1, &cfg.ball.ball()?)?;
                self.write_json(command, "excess.json", r)?;
                Ok(format!("excess: E = {:.6e}, D = {:.6e}", r.excess, r.data))
            }
            Command::Tilt => {
                let p = self.problem()?;
                let (_, rec) = tilt_step(&p.map, &p.rho0, &p.rho1, &cfg.ball.ball()?, &cfg.tilt)?;
                self.write_json(command, "tilt.json", &rec)?;
                Ok(format!("tilt: E_in = {:.6e}, E_out = {:.6e}", rec.e_in, rec.e_out))
            }
            Command::Iterate => {
                let p = self.problem()?;
                let state = iterate(&p.map, &p.rho0, &p.rho1, &cfg.ball.ball()?, &cfg.iterate_config())?;
                let summary = state.summary();
                self.write_csv("trace.csv", &state.to_csv())?;
                self.write_json(command, "iterate.json", IterateReport { summary: summary.clone(), state: state.clone() })?;
                Ok(format!(
                    "iterate: {} steps, decay exponent {:.4}, target {:.4}",
                    state.e_trace.len() - 1, summary.decay_exponent, summary.target_exponent
                ))
            }
            Command::Seminorm => {
                let p = self.problem()?;
                let s = &cfg.seminorm;
                let r_min = s.r_min.unwrap_or(2.0 * p.rho0.grid().spacing());
                let sn = campanato_seminorm(&p.map, &Ball::new(s.center, s.radius)?, s.alpha, r_min)?;
                self.write_json(command, "seminorm.json", &sn)?;
                Ok(format!("seminorm: {:.6e} over {} levels", sn.value, sn.levels.len()))
            }
            Command::Certify => {
                let p = self.problem()?;
                let c = &cfg.certify;
                let eps = self.eps_cal(c.eps_cal)?;
                let cert =
                    certify_point(&p.map, &p.rho0, &p.rho1, c.center, c.radius, c.alpha, eps, &cfg.iterate_config())?;
                self.write_json(command, "certificate.json", &cert)?;
                let verdict = if cert.verdict == Verdict::Pass { "pass" } else { "fail" };
                Ok(format!("certify: {verdict} (value {:.6e}, threshold {:.6e})", cert.hypothesis_value, eps))
            }
            Command::Scan => {
                let p = self.problem()?;
                let s = &cfg.scan;
                let eps = self.eps_cal(s.eps_cal)?;
                let table = scan_table(&p.map, &p.rho0, &p.rho1, &Ball::new(s.center, s.radius)?, &s.ladder)?;
                let report = table.certify(&p.rho0, eps, s.alpha);
                if s.raster {
                    self.write_csv("raster.csv", &report.raster_csv(&p.rho0))?;
                }
                self.write_json(command, "scan.json", &report)?;
                Ok(format!("scan: coverage {:.4} over {} centers", report.coverage, report.points.len()))
            }
            Command::Calibrate => {
                let c = &cfg.calibrate;
                if c.cases.is_empty() {
                    return Err(Error::Config("calibrate needs at least one [[calibrate.cases]] entry".into()));
                }
                let domain = Ball::new(c.center, c.radius)?;
                let mut cases = Vec::with_capacity(c.cases.len());
                for (k, spec) in c.cases.iter().enumerate() {
                    log::info!("calibration case {}: solving", spec.name);
                    let p = spec.instance.solve(&self.base, cfg.seed.wrapping_add(2 * k as u64))?;
                    let table = scan_table(&p.map, &p.rho0, &p.rho1, &domain, &c.ladder)?;
                    let bad = spec.singular.then(|| bad_set(&p.rho0, &p.rho1, spec.bad_margin));
                    cases.push(CalibrationCase { name: spec.name.clone(), table, rho0: (*p.rho0).clone(), bad });
                }
                let cal = calibrate(&cases, c.alpha, &c.options())?;
                self.write_json(command, "eps_cal.json", &cal)?;
                Ok(format!(
                    "calibrate: eps_cal = {:.6e} (coverage bound {:.6e}, false-pass bound {:.6e})",
                    cal.eps_cal, cal.eps_coverage, cal.eps_false_pass
                ))
            }
        }
    }
}

/// Cells within `margin` of a zero-density cell of either marginal.
pub fn bad_set(rho0: &GridDensity, rho1: &GridDensity, margin: f64) -> Vec<bool> {
    let grid = rho0.grid();
    let zeros: Vec<usize> =
        (0..grid.len()).filter(|&i| rho0.values()[i] == 0.0 || rho1.values()[i] == 0.0).collect();
    let mut bad = vec![false; grid.len()];
    for i in zeros {
        bad[i] = true;
        if margin > 0.0 {
            for j in grid.cells_in(&Ball { center: grid.center(i), radius: margin }) {
                bad[j] = true;
            }
        }
    }
    bad
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub cells: usize,
    pub spacing: f64,
    pub max_spread: f64,
    /// Source cells where the map is undefined.
    pub skipped: usize,
    /// Worst sampled monotonicity violation in units of the tolerance.
    pub monotonicity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateReport {
    pub summary: crate::campanato::IterationSummary,
    pub state: crate::campanato::IterationState,
}
