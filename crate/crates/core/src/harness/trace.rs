//! Trace persistence.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a trace back yields bit-identical values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::solver::IterationRecord;

pub const TRACE_HEADER: [&str; 6] = ["k", "f", "alpha", "backtracks", "comp_residual", "v_norm_x"];
pub const TRAJECTORY_HEADER: [&str; 3] = ["k", "x1", "x2"];

pub fn write_trace<W: Write>(out: W, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            r.k.to_string(),
            r.f_value.to_string(),
            r.step_alpha.to_string(),
            r.backtracks.to_string(),
            r.complementarity_residual.to_string(),
            r.v_norm_x.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_csv(trace: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace)?;
    Ok(buf)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: bad or missing column `{}`", TRACE_HEADER[i])))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Format(format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &TRACE_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        out.push(IterationRecord {
            k: field(&rec, 0, line)?,
            f_value: field(&rec, 1, line)?,
            step_alpha: field(&rec, 2, line)?,
            backtracks: field(&rec, 3, line)?,
            complementarity_residual: field(&rec, 4, line)?,
            v_norm_x: field(&rec, 5, line)?,
        });
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    read_trace(std::fs::File::open(path)?)
}

/// 2-D iterates in original (unlifted) coordinates, one row per iterate.
pub fn trajectory_to_csv(points: &[(f64, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    for (k, (a, b)) in points.iter().enumerate() {
        w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(std::fs::File::open(path)?);
    check_header(&mut rdr, &TRAJECTORY_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad trajectory column {}", TRAJECTORY_HEADER[i])))
        };
        out.push((get(1)?, get(2)?));
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<IterationRecord> {
        vec![
            IterationRecord { k: 0, f_value: 1.0 / 3.0, step_alpha: 0.1, backtracks: 2, complementarity_residual: 1e-300, v_norm_x: 0.7 },
            IterationRecord { k: 1, f_value: -2.5e-17, step_alpha: 0.0, backtracks: 0, complementarity_residual: 5e-324, v_norm_x: f64::MAX },
        ]
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let bytes = trace_to_csv(&sample()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("k,f,alpha,backtracks,comp_residual,v_norm_x\n"));
        assert_eq!(read_trace(bytes.as_slice()).unwrap(), sample());
    }

    #[test]
    fn rejects_wrong_header_and_garbage() {
        assert!(read_trace("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_trace("k,f,alpha,backtracks,comp_residual,v_norm_x\n0,x,1,0,0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn trajectory_roundtrip_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/traj.csv");
        let pts = vec![(0.5, -1.25), (1.0 / 7.0, 3.0)];
        write_atomic(&path, &trajectory_to_csv(&pts).unwrap()).unwrap();
        assert_eq!(load_trajectory(&path).unwrap(), pts);
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
