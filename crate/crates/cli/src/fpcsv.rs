//! Fingerprint CSV interchange: one fingerprint per line as interleaved
//! `re,im` pairs. `#` lines are comments.

use std::io::Write;
use std::path::Path;

use mrf_core::sim::Fingerprint;
use mrf_core::{Error, Result};
use num_complex::Complex64;

pub fn write_fingerprints(path: &Path, fps: &[Fingerprint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# one fingerprint per line: re0,im0,re1,im1,...")?;
    for fp in fps {
        let cells: Vec<String> = fp
            .samples
            .iter()
            .flat_map(|s| [format!("{}", s.re), format!("{}", s.im)])
            .collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_fingerprints(path: &Path) -> Result<Vec<Fingerprint>> {
    let text = std::fs::read_to_string(path)?;
    let mut fps = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() % 2 != 0 || vals.is_empty() {
            return Err(Error::Format(format!(
                "{}:{}: expected an even, non-zero number of values",
                path.display(),
                lineno + 1
            )));
        }
        let samples = vals
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        fps.push(Fingerprint { samples });
    }
    if fps.is_empty() {
        return Err(Error::Format(format!("{}: no fingerprints found", path.display())));
    }
    Ok(fps)
}
