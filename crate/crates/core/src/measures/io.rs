//! Density ingestion: plain-text CSV grids and binary PGM images.
//!
//! CSV layout: the first line holds `d,nx[,ny],origin_x[,origin_y],h`, every
//! following line one row of `nx` comma-separated values, rows ordered by
//! increasing `y`. A one-dimensional grid has a single value row.

use std::fmt::Write as _;
use std::path::Path;

use super::{Grid, GridDensity};
use crate::error::{Error, Result};
use crate::numerics::fmt17;

fn parse_f64(tok: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad number {tok:?}: {e}")))
}

fn parse_usize(tok: &str) -> Result<usize> {
    tok.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("bad integer {tok:?}: {e}")))
}

pub fn parse_csv_density(text: &str) -> Result<GridDensity> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty density file".into()))?;
    let toks: Vec<&str> = header.split(',').collect();
    let dim = parse_usize(toks.first().copied().unwrap_or(""))?;
    let grid = match (dim, toks.len()) {
        (1, 4) => Grid::new(
            1,
            [parse_usize(toks[1])?, 1],
            [parse_f64(toks[2])?, 0.0],
            parse_f64(toks[3])?,
        )?,
        (2, 6) => Grid::new(
            2,
            [parse_usize(toks[1])?, parse_usize(toks[2])?],
            [parse_f64(toks[3])?, parse_f64(toks[4])?],
            parse_f64(toks[5])?,
        )?,
        _ => {
            return Err(Error::Parse(format!(
                "header {header:?} does not match d,nx[,ny],origin_x[,origin_y],h"
            )))
        }
    };
    let [nx, ny] = grid.shape();
    let mut values = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate() {
        if row >= ny {
            return Err(Error::Parse(format!("more than {ny} value rows")));
        }
        let before = values.len();
        for tok in line.split(',') {
            values.push(parse_f64(tok)?);
        }
        if values.len() - before != nx {
            return Err(Error::Parse(format!(
                "row {row} has {} values, expected {nx}",
                values.len() - before
            )));
        }
    }
    if values.len() != grid.len() {
        return Err(Error::Parse(format!(
            "{} values for a {nx}x{ny} grid",
            values.len()
        )));
    }
    GridDensity::new(grid, values)
}

pub fn read_csv_density(path: &Path) -> Result<GridDensity> {
    parse_csv_density(&std::fs::read_to_string(path)?)
}

pub fn format_csv_density(rho: &GridDensity) -> String {
    let g = rho.grid();
    let [nx, ny] = g.shape();
    let o = g.origin();
    let mut out = if g.dim() == 1 {
        format!("1,{nx},{},{}\n", fmt17(o[0]), fmt17(g.spacing()))
    } else {
        format!(
            "2,{nx},{ny},{},{},{}\n",
            fmt17(o[0]),
            fmt17(o[1]),
            fmt17(g.spacing())
        )
    };
    for iy in 0..ny {
        let row: Vec<String> = (0..nx)
            .map(|ix| fmt17(rho.values()[g.index(ix, iy)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_csv_density(rho: &GridDensity, path: &Path) -> Result<()> {
    std::fs::write(path, format_csv_density(rho))?;
    Ok(())
}

/// Affine map from pixel intensity to density: `0 -> min`, `maxval -> max`.
#[derive(Clone, Copy, Debug)]
pub struct PgmRange {
    pub min: f64,
    pub max: f64,
}

/// Parse a binary (P5) PGM. Image row 0 is the top of the picture and is
/// mapped to the largest `y`.
pub fn parse_pgm_density(
    bytes: &[u8],
    origin: [f64; 2],
    spacing: f64,
    range: PgmRange,
) -> Result<GridDensity> {
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Parse(format!(
            "unsupported PGM magic {:?} (need P5)",
            fields[0]
        )));
    }
    let width = parse_usize(&fields[1])?;
    let height = parse_usize(&fields[2])?;
    let maxval = parse_usize(&fields[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("bad PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    if bytes.len() < pos + need {
        return Err(Error::Parse("truncated PGM raster".into()));
    }
    let raster = &bytes[pos..pos + need];
    let grid = Grid::new(2, [width, height], origin, spacing)?;
    let mut values = vec![0.0; grid.len()];
    for row in 0..height {
        let iy = height - 1 - row;
        for ix in 0..width {
            let k = row * width + ix;
            let px = if bpp == 1 {
                raster[k] as f64
            } else {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as f64
            };
            values[grid.index(ix, iy)] = range.min + (range.max - range.min) * px / maxval as f64;
        }
    }
    GridDensity::new(grid, values)
}

pub fn read_pgm_density(
    path: &Path,
    origin: [f64; 2],
    spacing: f64,
    range: PgmRange,
) -> Result<GridDensity> {
    parse_pgm_density(&std::fs::read(path)?, origin, spacing, range)
}
