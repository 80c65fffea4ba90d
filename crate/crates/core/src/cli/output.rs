//! Diagnostics CSV and snapshot files.
//!
//! Floats are written in the shortest form that parses back to the same
//! bits, so both file kinds are byte-reproducible and diffable.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const DIAGNOSTICS_HEADER: &str =
    "step,time,species,mass_u,mass_utilde,min_u,max_u,min_utilde,max_utilde,w_min_increment,coef_min,coef_max,clamps,cg_iters";

pub const SNAPSHOT_MAGIC: &str = "RELAXDIFF v1";

/// Shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// One CSV line without the newline. Species are numbered from 1 as in the
/// config sections.
pub fn diagnostics_line(r: &DiagnosticsRow) -> String {
    let f = fmt_f64;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        f(r.time),
        r.species + 1,
        f(r.mass_u),
        f(r.mass_utilde),
        f(r.min_u),
        f(r.max_u),
        f(r.min_utilde),
        f(r.max_utilde),
        f(r.w_min_increment),
        f(r.coef_min),
        f(r.coef_max),
        r.clamp_activations + r.cap_activations,
        r.cg_iterations
    )
}

/// Writes `diagnostics.csv`, flushing after every step.
pub struct DiagnosticsWriter<W: Write> {
    out: W,
}

impl DiagnosticsWriter<BufWriter<fs::File>> {
    pub fn create(path: &Path) -> Result<Self> {
        DiagnosticsWriter::new(BufWriter::new(fs::File::create(path)?))
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{DIAGNOSTICS_HEADER}")?;
        Ok(DiagnosticsWriter { out })
    }

    pub fn write_step(&mut self, rows: &[DiagnosticsRow]) -> Result<()> {
        for r in rows {
            writeln!(self.out, "{}", diagnostics_line(r))?;
        }
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Densities of all species at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub time: f64,
    pub fields: Vec<Field>,
}

pub fn snapshot_name(step: usize) -> String {
    format!("snap_{step}.fld")
}

pub fn format_snapshot(grid: &Grid, time: f64, fields: &[Field]) -> String {
    let mut s = String::new();
    s.push_str(SNAPSHOT_MAGIC);
    s.push('\n');
    let mut header = vec![grid.dims().to_string()];
    header.extend(grid.cells_per_axis().iter().map(|n| n.to_string()));
    header.extend(grid.spacing().iter().map(|&h| fmt_f64(h)));
    header.push(fields.len().to_string());
    header.push(fmt_f64(time));
    s.push_str(&header.join(" "));
    s.push('\n');
    for f in fields {
        let row: Vec<String> = f.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_snapshot(path: &Path, grid: &Grid, time: f64, fields: &[Field]) -> Result<()> {
    fs::write(path, format_snapshot(grid, time, fields))?;
    Ok(())
}

pub fn parse_snapshot(text: &str, path: &Path) -> Result<Snapshot> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(SNAPSHOT_MAGIC) {
        return Err(bad(format!("first line must be `{SNAPSHOT_MAGIC}`")));
    }
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing header line".into()))?
        .split_whitespace()
        .collect();
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("`{s}` is not an integer")));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let dims = int(header.first().ok_or_else(|| bad("empty header".into()))?)?;
    if !(dims == 1 || dims == 2) || header.len() != 2 * dims + 3 {
        return Err(bad(format!("header `{}` does not match `dims n1 [n2] h1 [h2] species time`", header.join(" "))));
    }
    let cells = header[1..=dims].iter().map(|s| int(s)).collect::<Result<Vec<_>>>()?;
    let spacing = header[dims + 1..=2 * dims].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
    let species = int(header[2 * dims + 1])?;
    let time = num(header[2 * dims + 2])?;
    let grid = Grid::new(&cells, &spacing).map_err(|e| bad(e.to_string()))?;
    let mut fields = Vec::with_capacity(species);
    for k in 0..species {
        let line = lines.next().ok_or_else(|| bad(format!("missing row for species {}", k + 1)))?;
        let values = line.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
        fields.push(Field::new(&grid, values).map_err(|e| bad(format!("species {}: {e}", k + 1)))?);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing data after the species rows".into()));
    }
    Ok(Snapshot { grid, time, fields })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_snapshot(&text, path)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 5e-324, f64::MAX] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0");
    }

    #[test]
    fn snapshot_layout() {
        let g = Grid::new_2d(2, 1, 0.5, 1.0).unwrap();
        let f = Field::new(&g, vec![0.1, 2.0]).unwrap();
        let text = format_snapshot(&g, 0.25, std::slice::from_ref(&f));
        assert_eq!(text, "RELAXDIFF v1\n2 2 1 0.5 1.0 1 0.25\n0.1 2.0\n");
        let s = parse_snapshot(&text, Path::new("x")).unwrap();
        assert_eq!(s, Snapshot { grid: g, time: 0.25, fields: vec![f] });
    }

    #[test]
    fn malformed_snapshots() {
        let p = Path::new("x");
        for text in [
            "",
            "RELAXDIFF v2\n1 2 0.5 1 0\n1 2\n",
            "RELAXDIFF v1\n1 2 0.5 1\n1 2\n",
            "RELAXDIFF v1\n1 2 0.5 1 0\n1\n",
            "RELAXDIFF v1\n1 2 0.5 2 0\n1 2\n",
            "RELAXDIFF v1\n1 2 0.5 1 0\n1 x\n",
            "RELAXDIFF v1\n1 2 0.5 1 0\n1 2\n3 4\n",
        ] {
            assert!(parse_snapshot(text, p).is_err(), "{text:?}");
        }
    }

    #[test]
    fn csv_header_and_row() {
        let mut w = DiagnosticsWriter::new(Vec::new()).unwrap();
        let row = DiagnosticsRow {
            step: 3,
            time: 0.03,
            species: 0,
            mass_u: 1.0,
            mass_utilde: 1.0,
            min_u: 0.0,
            max_u: 2.0,
            min_utilde: 0.5,
            max_utilde: 1.5,
            w_min_increment: 0.001,
            coef_min: 0.05,
            coef_max: 1.0,
            clamp_activations: 1,
            cap_activations: 2,
            cg_iterations: 17,
            short_step: false,
        };
        w.write_step(&[row]).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text, format!("{DIAGNOSTICS_HEADER}\n3,0.03,1,1.0,1.0,0.0,2.0,0.5,1.5,0.001,0.05,1.0,3,17\n"));
    }
}
