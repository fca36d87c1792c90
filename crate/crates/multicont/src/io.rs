//! Deterministic artifact output: CSV tables, grayscale PGM heatmaps, and
//! a conductivity-field interchange format.
//!
//! Every artifact starts with a provenance comment (tool version plus the
//! configuration hash) so outputs can be traced to their inputs.

use crate::grid::FineGrid;
use crate::media::{ConductivityField, ContinuumMap};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Provenance line placed (as a comment) at the top of every artifact.
pub fn provenance(config_hash: &str) -> String {
    format!(
        "multicont {} config={config_hash}",
        env!("CARGO_PKG_VERSION")
    )
}

/// Writes a CSV with a `#` provenance comment, a header line, and rows.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    config_hash: &str,
    header: &str,
    rows: &[String],
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# {}", provenance(config_hash)).unwrap();
    writeln!(out, "{header}").unwrap();
    for r in rows {
        writeln!(out, "{r}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a nodal field on an `(n+1) x (n+1)` grid as `x,y,value` rows.
pub fn write_nodal_csv<P: AsRef<Path>>(
    path: P,
    config_hash: &str,
    nodes_per_side: usize,
    h: f64,
    values: &[f64],
) -> Result<()> {
    let mut rows = Vec::with_capacity(values.len());
    for iy in 0..nodes_per_side {
        for ix in 0..nodes_per_side {
            rows.push(format!(
                "{:.17e},{:.17e},{:.17e}",
                ix as f64 * h,
                iy as f64 * h,
                values[iy * nodes_per_side + ix]
            ));
        }
    }
    write_csv(path, config_hash, "x,y,value", &rows)
}

/// Writes a row-major scalar field as a plain-text PGM heatmap, linearly
/// mapped from [min, max] to 0..=255. Rows are flipped so y points up.
pub fn write_pgm<P: AsRef<Path>>(
    path: P,
    config_hash: &str,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Config(format!(
            "heatmap size mismatch: {} values for {width}x{height}",
            values.len()
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    writeln!(out, "P2").unwrap();
    writeln!(out, "# {}", provenance(config_hash)).unwrap();
    writeln!(out, "{width} {height}").unwrap();
    writeln!(out, "255").unwrap();
    for iy in (0..height).rev() {
        let mut line = String::new();
        for ix in 0..width {
            let v = ((values[iy * width + ix] - lo) / span * 255.0).round() as i64;
            let _ = write!(line, "{} ", v.clamp(0, 255));
        }
        writeln!(out, "{}", line.trim_end()).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Serializes any serde value as pretty JSON.
pub fn write_json<P: AsRef<Path>, T: serde::Serialize>(path: P, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json serialization failed: {e}")))?;
    f.write_all(s.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Exports a conductivity field and its continuum labels as CSV:
/// one `kappa,label` row per fine cell, row-major.
pub fn export_kappa<P: AsRef<Path>>(
    path: P,
    config_hash: &str,
    fine: &FineGrid,
    kappa: &ConductivityField,
    map: &ContinuumMap,
) -> Result<()> {
    let mut rows = Vec::with_capacity(fine.cell_count() + 1);
    rows.push(format!(
        "meta,{},{:.17e},{}",
        fine.nx, kappa.epsilon, map.n
    ));
    for c in 0..fine.cell_count() {
        rows.push(format!("{:.17e},{}", kappa.values[c], map.labels[c]));
    }
    write_csv(path, config_hash, "kappa,label", &rows)
}

/// Imports a conductivity field written by [`export_kappa`].
pub fn import_kappa<P: AsRef<Path>>(
    path: P,
) -> Result<(FineGrid, ConductivityField, ContinuumMap)> {
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().unwrap_or_default();
    if header != "kappa,label" {
        return Err(Error::Config(format!(
            "unexpected header in conductivity file: {header:?}"
        )));
    }
    let meta = lines
        .next()
        .ok_or_else(|| Error::Config("missing meta row in conductivity file".into()))?;
    let mparts: Vec<&str> = meta.split(',').collect();
    if mparts.len() != 4 || mparts[0] != "meta" {
        return Err(Error::Config(format!("malformed meta row: {meta:?}")));
    }
    let nx: usize = mparts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad nx in meta row: {meta:?}")))?;
    let eps: f64 = mparts[2]
        .parse()
        .map_err(|_| Error::Config(format!("bad epsilon in meta row: {meta:?}")))?;
    let n: usize = mparts[3]
        .parse()
        .map_err(|_| Error::Config(format!("bad continuum count in meta row: {meta:?}")))?;
    let fine = FineGrid::new(nx)?;
    let mut values = Vec::with_capacity(fine.cell_count());
    let mut labels = Vec::with_capacity(fine.cell_count());
    for (i, line) in lines.enumerate() {
        let (k, l) = line
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("malformed row {}: {line:?}", i + 1)))?;
        values.push(
            k.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad conductivity in row {}", i + 1)))?,
        );
        labels.push(
            l.parse::<u8>()
                .map_err(|_| Error::Config(format!("bad label in row {}", i + 1)))?,
        );
    }
    if values.len() != fine.cell_count() {
        return Err(Error::Config(format!(
            "expected {} cells, file has {}",
            fine.cell_count(),
            values.len()
        )));
    }
    let kappa = ConductivityField {
        values,
        epsilon: eps,
        descriptor: format!("file nx={nx}"),
    };
    Ok((fine, kappa, ContinuumMap::new(n, labels)?))
}
