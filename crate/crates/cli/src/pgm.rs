//! 16-bit binary PGM (P5) emission with a fixed display window.

use std::io::Write;
use std::path::Path;

use mrf_core::Result;

/// Writes `values` (row-major, `height x width`) as a 16-bit PGM, mapping
/// the window `[lo, hi]` linearly onto 0..=65535 with clamping.
pub fn write_pgm16(
    path: &Path,
    values: &[f64],
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    assert_eq!(values.len(), height * width);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n65535\n")?;
    for &v in values {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let px = (t * 65535.0).round() as u16;
        // PGM multi-byte samples are big-endian.
        f.write_all(&px.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}
