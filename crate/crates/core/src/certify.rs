//! Pointwise ε-regularity certificates, grid scans for the regular set, and
//! the empirical calibration of the threshold.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campanato::{holder_estimate, iterate, HolderEstimate, IterateConfig, IterationSummary};
use crate::error::{Error, Result};
use crate::excess::hypothesis_quantity;
use crate::measures::{Ball, GridDensity};
use crate::numerics::{add, fmt17, unit_ball_volume, Point};
use crate::transport::TransportMap;

/// Version tag of the shipped calibration data.
pub const CALIBRATION_VERSION: &str = "1";

const SHIPPED: &str = include_str!("../data/eps_cal.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of [`certify_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub center: Point,
    #[serde(rename = "R")]
    pub radius: f64,
    /// `omega_d E(B_2R) + D(B_2R)`.
    pub hypothesis_value: f64,
    /// Excess on `B_2R` in the mean-over-ball normalization.
    #[serde(rename = "E_2R")]
    pub excess: f64,
    #[serde(rename = "D_2R")]
    pub data: f64,
    pub omega_d: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub verdict: Verdict,
    pub trace: Option<IterationSummary>,
    #[serde(rename = "E_trace")]
    pub e_trace: Option<Vec<f64>>,
    pub holder: Option<HolderEstimate>,
    /// Why the attached estimate is missing, if it is.
    pub note: Option<String>,
}

/// The left-hand side of the ε-regularity hypothesis on `B_2R(x0)`.
///
/// `(2R)^{-(d+2)} int_{B_2R} |T - x|^2 rho0 = omega_d E(B_2R)` because the
/// excess averages over `|B_2R| = omega_d (2R)^d` and divides by `(2R)^2`.
/// Returns `(value, E, D)`.
pub fn hypothesis_value(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    x0: Point,
    radius: f64,
) -> Result<(f64, f64, f64)> {
    let big = Ball::new(x0, 2.0 * radius)?;
    if !rho0.grid().contains_ball(&big) {
        return Err(Error::DomainExceeded(format!(
            "B_2R with R = {radius:.4e} at ({:.4}, {:.4}) leaves the grid",
            x0[0], x0[1]
        )));
    }
    let q = hypothesis_quantity(t, rho0, rho1, &big)?;
    let omega = unit_ball_volume(rho0.dim());
    Ok((omega * q.excess + q.data, q.excess, q.data))
}

/// Certify `B_R(x0)`. On a pass the iteration and the Hölder estimate are
/// run on `B_R(x0)` and attached; their failures become a note.
#[allow(clippy::too_many_arguments)]
pub fn certify_point(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    x0: Point,
    radius: f64,
    alpha: f64,
    eps_cal: f64,
    cfg: &IterateConfig,
) -> Result<Certificate> {
    let (value, excess, data) = hypothesis_value(t, rho0, rho1, x0, radius)?;
    let verdict = if value <= eps_cal { Verdict::Pass } else { Verdict::Fail };
    let mut cert = Certificate {
        center: x0,
        radius,
        hypothesis_value: value,
        excess,
        data,
        omega_d: unit_ball_volume(rho0.dim()),
        threshold: eps_cal,
        alpha,
        verdict,
        trace: None,
        e_trace: None,
        holder: None,
        note: None,
    };
    if verdict == Verdict::Pass {
        let cfg = IterateConfig { alpha, ..cfg.clone() };
        let state = iterate(t, rho0, rho1, &Ball::new(x0, radius)?, &cfg)?;
        match holder_estimate(&state, t) {
            Ok(h) => cert.holder = Some(h),
            Err(e) => cert.note = Some(e.to_string()),
        }
        cert.trace = Some(state.summary());
        cert.e_trace = Some(state.e_trace);
    }
    Ok(cert)
}

/// Status of one scan center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScanStatus {
    Certified {
        #[serde(rename = "R")]
        radius: f64,
        value: f64,
    },
    /// Every admissible radius failed; `value` is the smallest seen.
    Uncertified { value: f64 },
    /// No radius was admissible (support boundary or grid edge).
    Excluded { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub center: Point,
    #[serde(flatten)]
    pub status: ScanStatus,
}

/// Hypothesis values of every (center, radius) pair of a scan, reusable
/// across thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub domain: Ball,
    pub ladder: Vec<f64>,
    pub centers: Vec<Point>,
    /// `values[c][r]`; `None` when the ball is excluded.
    pub values: Vec<Vec<Option<f64>>>,
    pub reasons: Vec<Vec<Option<String>>>,
}

/// Result of [`scan_regular_set`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub domain: Ball,
    pub ladder: Vec<f64>,
    pub eps_cal: f64,
    pub alpha: f64,
    pub points: Vec<ScanPoint>,
    /// Fraction of the domain cells covered by certified balls.
    pub coverage: f64,
    /// Per grid cell: 1 certified, 0 uncertified, -1 outside the domain.
    #[serde(skip)]
    pub raster: Vec<i8>,
}

impl ScanReport {
    /// Certified balls.
    pub fn certified(&self) -> Vec<Ball> {
        self.points
            .iter()
            .filter_map(|p| match p.status {
                ScanStatus::Certified { radius, .. } => Some(Ball { center: p.center, radius }),
                _ => None,
            })
            .collect()
    }

    /// CSV `x,y,certified` over the domain cells.
    pub fn raster_csv(&self, rho: &GridDensity) -> String {
        let grid = rho.grid();
        let mut out = String::from("x,y,certified\n");
        for (i, s) in self.raster.iter().enumerate() {
            if *s >= 0 {
                let c = grid.center(i);
                let _ = writeln!(out, "{},{},{}", fmt17(c[0]), fmt17(c[1]), s);
            }
        }
        out
    }
}

/// Scan centers on a lattice of spacing `ladder[0] / 2` inside `domain`.
fn scan_centers(domain: &Ball, spacing: f64, dim: usize) -> Vec<Point> {
    let m = (domain.radius / spacing).floor() as i64;
    let mut out = Vec::new();
    for j in if dim == 1 { 0..=0 } else { -m..=m } {
        for i in -m..=m {
            let o = [i as f64 * spacing, j as f64 * spacing];
            if o[0] * o[0] + o[1] * o[1] <= domain.radius * domain.radius * (1.0 + 1e-12) {
                out.push(add(&domain.center, &o));
            }
        }
    }
    out
}

/// Hypothesis values on the scan lattice. Balls whose `B_2R` leaves the
/// grid or meets a zero-density cell of either marginal are excluded.
pub fn scan_table(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    domain: &Ball,
    ladder: &[f64],
) -> Result<ScanTable> {
    let grid = rho0.grid();
    let h = grid.spacing();
    if ladder.is_empty() {
        return Err(Error::InvalidInput("empty radius ladder".into()));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("radius ladder must be strictly descending".into()));
    }
    if let Some(r) = ladder.iter().find(|r| !(**r >= 8.0 * h * (1.0 - 1e-12))) {
        return Err(Error::InvalidInput(format!("radius {r:.4e} below eight cells ({:.4e})", 8.0 * h)));
    }
    let centers = scan_centers(domain, ladder[0] / 2.0, grid.dim());
    let rows: Vec<(Vec<Option<f64>>, Vec<Option<String>>)> = centers
        .par_iter()
        .map(|c| {
            let mut vals = Vec::with_capacity(ladder.len());
            let mut why = Vec::with_capacity(ladder.len());
            for &r in ladder {
                let big = Ball { center: *c, radius: 2.0 * r };
                if !grid.contains_ball(&big) {
                    vals.push(None);
                    why.push(Some("B_2R leaves the grid".to_string()));
                    continue;
                }
                let cells = grid.cells_in(&big);
                if cells.iter().any(|&i| rho0.values()[i] == 0.0 || rho1.values()[i] == 0.0) {
                    vals.push(None);
                    why.push(Some("B_2R meets the support boundary".to_string()));
                    continue;
                }
                match hypothesis_value(t, rho0, rho1, *c, r) {
                    Ok((v, _, _)) => {
                        vals.push(Some(v));
                        why.push(None);
                    }
                    Err(e) => {
                        vals.push(None);
                        why.push(Some(e.to_string()));
                    }
                }
            }
            (vals, why)
        })
        .collect();
    let (values, reasons) = rows.into_iter().unzip();
    Ok(ScanTable { domain: *domain, ladder: ladder.to_vec(), centers, values, reasons })
}

impl ScanTable {
    /// Certify every center at the largest radius whose value is at most
    /// `eps_cal`, and rasterize the union of certified balls.
    pub fn certify(&self, rho: &GridDensity, eps_cal: f64, alpha: f64) -> ScanReport {
        let grid = rho.grid();
        let points: Vec<ScanPoint> = self
            .centers
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let row = &self.values[ci];
                let status = match row.iter().position(|v| v.is_some_and(|v| v <= eps_cal)) {
                    Some(k) => ScanStatus::Certified { radius: self.ladder[k], value: row[k].unwrap_or(0.0) },
                    None => match row.iter().flatten().copied().reduce(f64::min) {
                        Some(value) => ScanStatus::Uncertified { value },
                        None => ScanStatus::Excluded {
                            reason: self.reasons[ci].iter().flatten().next().cloned().unwrap_or_default(),
                        },
                    },
                };
                ScanPoint { center: *c, status }
            })
            .collect();
        let mut raster = vec![-1i8; grid.len()];
        for i in grid.cells_in(&self.domain) {
            raster[i] = 0;
        }
        for p in &points {
            if let ScanStatus::Certified { radius, .. } = p.status {
                for i in grid.cells_in(&Ball { center: p.center, radius }) {
                    if raster[i] == 0 {
                        raster[i] = 1;
                    }
                }
            }
        }
        let inside = raster.iter().filter(|s| **s >= 0).count();
        let covered = raster.iter().filter(|s| **s == 1).count();
        ScanReport {
            domain: self.domain,
            ladder: self.ladder.clone(),
            eps_cal,
            alpha,
            points,
            coverage: if inside > 0 { covered as f64 / inside as f64 } else { 0.0 },
            raster,
        }
    }
}

/// Discrete regular set: certified balls on the scan lattice.
pub fn scan_regular_set(
    t: &TransportMap,
    rho0: &GridDensity,
    rho1: &GridDensity,
    domain: &Ball,
    alpha: f64,
    ladder: &[f64],
    eps_cal: f64,
) -> Result<ScanReport> {
    Ok(scan_table(t, rho0, rho1, domain, ladder)?.certify(rho0, eps_cal, alpha))
}

/// One calibration instance: a scan table plus, for singular fixtures, the
/// cells of the known bad set.
#[derive(Clone, Debug)]
pub struct CalibrationCase {
    pub name: String,
    pub table: ScanTable,
    pub rho0: GridDensity,
    pub bad: Option<Vec<bool>>,
}

/// Bisection settings for [`calibrate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateOptions {
    pub coverage_target: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self { coverage_target: 0.95, lo: 1e-8, hi: 1.0, iterations: 60 }
    }
}

/// Calibrated threshold with the two bisection bounds it sits between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: String,
    pub alpha: f64,
    pub eps_cal: f64,
    /// Smallest threshold giving the target coverage on every smooth case.
    pub eps_coverage: f64,
    /// Largest threshold with no certified ball meeting a bad set.
    pub eps_false_pass: f64,
    pub feasible: bool,
    pub coverage_target: f64,
    pub cases: Vec<CaseOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub coverage: f64,
    pub false_passes: usize,
}

fn false_passes(report: &ScanReport, rho: &GridDensity, bad: &[bool]) -> usize {
    report
        .certified()
        .iter()
        .filter(|b| rho.grid().cells_in(b).into_iter().any(|i| bad[i]))
        .count()
}

fn outcome(case: &CalibrationCase, eps: f64, alpha: f64) -> CaseOutcome {
    let r = case.table.certify(&case.rho0, eps, alpha);
    CaseOutcome {
        name: case.name.clone(),
        coverage: r.coverage,
        false_passes: case.bad.as_ref().map_or(0, |b| false_passes(&r, &case.rho0, b)),
    }
}

/// Bisect (in `log eps`) for the smallest threshold reaching the coverage
/// target on the smooth cases and the largest one with no false pass on the
/// singular cases. The calibrated value is their geometric mean when the
/// interval is nonempty.
pub fn calibrate(cases: &[CalibrationCase], alpha: f64, opts: &CalibrateOptions) -> Result<Calibration> {
    if cases.is_empty() {
        return Err(Error::InvalidInput("no calibration cases".into()));
    }
    if !(opts.lo > 0.0 && opts.hi > opts.lo) {
        return Err(Error::InvalidInput("calibration needs 0 < lo < hi".into()));
    }
    let covers = |eps: f64| {
        cases
            .iter()
            .filter(|c| c.bad.is_none())
            .all(|c| outcome(c, eps, alpha).coverage >= opts.coverage_target)
    };
    let clean = |eps: f64| cases.iter().filter(|c| c.bad.is_some()).all(|c| outcome(c, eps, alpha).false_passes == 0);
    // `pred` holds below some threshold and fails above it; returns the
    // bracketing pair (last holding, first failing) in log space
    let bisect = |pred: &dyn Fn(f64) -> bool| -> (f64, f64) {
        let (mut a, mut b) = (opts.lo.ln(), opts.hi.ln());
        for _ in 0..opts.iterations {
            let m = 0.5 * (a + b);
            if pred(m.exp()) {
                a = m;
            } else {
                b = m;
            }
        }
        (a.exp(), b.exp())
    };
    let eps_coverage = if covers(opts.lo) {
        opts.lo
    } else if !covers(opts.hi) {
        f64::INFINITY
    } else {
        bisect(&|e| !covers(e)).1
    };
    let eps_false_pass = if !clean(opts.lo) {
        0.0
    } else if clean(opts.hi) {
        opts.hi
    } else {
        bisect(&clean).0
    };
    let feasible = eps_coverage <= eps_false_pass;
    let eps_cal = if feasible { (eps_coverage * eps_false_pass).sqrt() } else { eps_false_pass };
    Ok(Calibration {
        version: CALIBRATION_VERSION.into(),
        alpha,
        eps_cal,
        eps_coverage,
        eps_false_pass,
        feasible,
        coverage_target: opts.coverage_target,
        cases: cases.iter().map(|c| outcome(c, eps_cal, alpha)).collect(),
    })
}

/// The calibration shipped with the crate, stored as the `result` of a
/// `calibrate` artifact.
pub fn shipped_calibration() -> Result<Calibration> {
    let mut doc: serde_json::Value = serde_json::from_str(SHIPPED)?;
    let c: Calibration = serde_json::from_value(doc["result"].take())?;
    if c.version != CALIBRATION_VERSION {
        return Err(Error::Config(format!(
            "shipped calibration has version {}, expected {CALIBRATION_VERSION}",
            c.version
        )));
    }
    Ok(c)
}
