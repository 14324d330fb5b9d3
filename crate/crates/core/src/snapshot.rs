//! Phase-space snapshot files.
//!
//! CSV snapshots have the header `x,v,f` with one row per grid point, `x`
//! varying slowest. Binary snapshots are little-endian `f64` values of `f` in
//! the same row-major order, with a sidecar `<file>.meta` of `key = value`
//! lines recording `n_x`, `n_v`, `length`, `v_min`, `v_max` and `t`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spectral::PhaseSpaceGrid;

/// Snapshot file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Csv,
    Binary,
}

impl SnapshotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Binary => "bin",
        }
    }
}

/// Grid extent and time of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub n_x: usize,
    pub n_v: usize,
    pub length: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub t: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn write_csv(path: &Path, grid: &PhaseSpaceGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,v,f")?;
    for (i, x) in grid.xs.iter().enumerate() {
        for (j, v) in grid.vs.iter().enumerate() {
            writeln!(w, "{x:.16e},{v:.16e},{:.16e}", grid.at(i, j))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary(path: &Path, grid: &PhaseSpaceGrid, meta: &SnapshotMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &grid.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let mut side = File::create(sidecar_path(path))?;
    writeln!(side, "n_x = {}", meta.n_x)?;
    writeln!(side, "n_v = {}", meta.n_v)?;
    writeln!(side, "length = {:e}", meta.length)?;
    writeln!(side, "v_min = {:e}", meta.v_min)?;
    writeln!(side, "v_max = {:e}", meta.v_max)?;
    writeln!(side, "t = {:e}", meta.t)?;
    Ok(())
}

/// Parses a sidecar file.
pub fn read_meta(path: &Path) -> Result<SnapshotMeta> {
    let file = BufReader::new(File::open(path)?);
    let mut get = std::collections::HashMap::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: format!("{} line {}", path.display(), i + 1),
            message: "expected `key = value`".into(),
        })?;
        get.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| -> Result<f64> {
        get.get(k)
            .ok_or_else(|| Error::Parse {
                context: path.display().to_string(),
                message: format!("missing key `{k}`"),
            })?
            .parse::<f64>()
            .map_err(|e| Error::Parse {
                context: format!("{} key `{k}`", path.display()),
                message: e.to_string(),
            })
    };
    Ok(SnapshotMeta {
        n_x: field("n_x")? as usize,
        n_v: field("n_v")? as usize,
        length: field("length")?,
        v_min: field("v_min")?,
        v_max: field("v_max")?,
        t: field("t")?,
    })
}

/// Reads a binary snapshot and its sidecar.
pub fn read_binary(path: &Path) -> Result<(PhaseSpaceGrid, SnapshotMeta)> {
    let meta = read_meta(&sidecar_path(path))?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * meta.n_x * meta.n_v {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!(
                "expected {} values, found {} bytes",
                meta.n_x * meta.n_v,
                bytes.len()
            ),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of eight bytes")))
        .collect();
    let xs = crate::spectral::uniform_x_grid(meta.length, meta.n_x);
    let dv = (meta.v_max - meta.v_min) / (meta.n_v.max(2) - 1) as f64;
    let vs = (0..meta.n_v)
        .map(|j| if j + 1 == meta.n_v { meta.v_max } else { meta.v_min + j as f64 * dv })
        .collect();
    Ok((PhaseSpaceGrid { xs, vs, values }, meta))
}

/// Reads a CSV snapshot; the grid is recovered from the distinct `x` and `v`.
pub fn read_csv(path: &Path) -> Result<PhaseSpaceGrid> {
    let parse_err = |message: String| Error::Parse {
        context: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["x", "v", "f"] {
        return Err(parse_err("expected header `x,v,f`".into()));
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut vs: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| parse_err(e.to_string()));
        let (x, v, f) = (num(0)?, num(1)?, num(2)?);
        if xs.last() != Some(&x) {
            xs.push(x);
        }
        if xs.len() == 1 {
            vs.push(v);
        }
        values.push(f);
    }
    if xs.is_empty() || values.len() != xs.len() * vs.len() {
        return Err(parse_err("rows do not form a tensor grid".into()));
    }
    Ok(PhaseSpaceGrid { xs, vs, values })
}

/// Simple statistics of a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSummary {
    pub n_x: usize,
    pub n_v: usize,
    pub min: f64,
    pub max: f64,
    /// Trapezoid estimate of `∫∫ f dx dv` (periodic in `x`).
    pub integral: f64,
}

pub fn summarize(grid: &PhaseSpaceGrid, length: f64) -> SnapshotSummary {
    let n_x = grid.xs.len();
    let n_v = grid.vs.len();
    let min = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dx = length / n_x as f64;
    let mut integral = 0.0;
    for i in 0..n_x {
        for j in 0..n_v.saturating_sub(1) {
            let dv = grid.vs[j + 1] - grid.vs[j];
            integral += 0.5 * dv * dx * (grid.at(i, j) + grid.at(i, j + 1));
        }
    }
    SnapshotSummary {
        n_x,
        n_v,
        min,
        max,
        integral,
    }
}
