use std::io::{Read, Write};
use std::path::Path;

use super::scan::QuadratureScan;
use crate::error::{Error, Result};

pub const SCAN_HEADER: [&str; 2] = ["phase_rad", "quadrature"];

/// Reads a `phase_rad,quadrature` CSV. Phases are reduced mod 2π and the
/// result is sorted by phase.
pub fn ingest_csv(path: &Path) -> Result<QuadratureScan> {
    ingest_reader(std::fs::File::open(path)?)
}

pub fn ingest_reader<R: Read>(input: R) -> Result<QuadratureScan> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || headers.get(0) != Some(SCAN_HEADER[0]) || headers.get(1) != Some(SCAN_HEADER[1]) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `phase_rad,quadrature`, found {headers:?}"),
        });
    }
    let mut phases = Vec::new();
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{name} {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("{name} {field:?} is not finite"),
                });
            }
            Ok(v)
        };
        phases.push(parse(&row[0], "phase")?);
        values.push(parse(&row[1], "quadrature")?);
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(QuadratureScan::new(phases, values)?.sorted())
}

pub fn export_csv(scan: &QuadratureScan, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(scan, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(scan: &QuadratureScan, w: &mut W) -> Result<()> {
    writeln!(w, "{},{}", SCAN_HEADER[0], SCAN_HEADER[1])?;
    for (p, v) in scan.phases().iter().zip(scan.values()) {
        writeln!(w, "{p},{v}")?;
    }
    Ok(())
}
