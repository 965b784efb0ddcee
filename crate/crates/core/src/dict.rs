//! Pre-simulated fingerprint dictionary and template-matching
//! reconstruction. Entries are stored unit-norm in f32; inner products
//! accumulate in f64.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::{simulate_fingerprint, Fingerprint, SequenceSchedule, TissueParams};

/// Cartesian (T1, T2, B1) grid; combinations with T2 > T1 are excluded.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub t1_values_ms: Vec<f64>,
    pub t2_values_ms: Vec<f64>,
    pub b1_values: Vec<f64>,
}

impl ParamGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("t1", &self.t1_values_ms),
            ("t2", &self.t2_values_ms),
            ("b1", &self.b1_values),
        ] {
            if axis.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} axis is empty")));
            }
            if !axis.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "{name} axis must be strictly increasing"
                )));
            }
        }
        if self.t1_values_ms[0] <= 0.0 || self.t2_values_ms[0] <= 0.0 {
            return Err(Error::InvalidConfig("relaxation values must be positive".into()));
        }
        if self.b1_values[0] < 0.0 {
            return Err(Error::InvalidConfig("b1 values must be >= 0".into()));
        }
        Ok(())
    }

    /// Linearly spaced axis helper.
    pub fn linspace(min: f64, max: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![min];
        }
        (0..n)
            .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Valid (t2 <= t1) combinations in lexicographic (t1, t2, b1) order.
    pub fn valid_combinations(&self) -> Vec<TissueParams> {
        let mut out = Vec::new();
        for &t1 in &self.t1_values_ms {
            for &t2 in &self.t2_values_ms {
                if t2 > t1 {
                    continue;
                }
                for &b1 in &self.b1_values {
                    out.push(TissueParams { t1_ms: t1, t2_ms: t2, b1 });
                }
            }
        }
        out
    }

    /// The reference configuration from the acquisition description:
    /// T1 50-4500 ms, T2 20-800 ms, B1 0.7-1.3, with step counts chosen so
    /// the physical (t2 <= t1) combination count lands near 131,000.
    /// Documented reference only; tests use desk-scale grids.
    pub fn reference() -> ParamGrid {
        // 80 x 64 x 28 = 143,360 raw; ~131k survive the t2 <= t1 filter.
        ParamGrid {
            t1_values_ms: Self::linspace(50.0, 4500.0, 80),
            t2_values_ms: Self::linspace(20.0, 800.0, 64),
            b1_values: Self::linspace(0.7, 1.3, 28),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dictionary {
    /// Row-major (n_entries x n_seq) unit-norm complex entries.
    entries: Vec<Complex32>,
    n_seq: usize,
    params: Vec<TissueParams>,
    schedule_digest: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub params: TissueParams,
    pub score: f64,
    pub index: usize,
}

impl Dictionary {
    pub fn n_entries(&self) -> usize {
        self.params.len()
    }

    pub fn n_seq(&self) -> usize {
        self.n_seq
    }

    pub fn params(&self) -> &[TissueParams] {
        &self.params
    }

    pub fn schedule_digest(&self) -> u64 {
        self.schedule_digest
    }

    pub fn entry_row(&self, i: usize) -> &[Complex32] {
        &self.entries[i * self.n_seq..(i + 1) * self.n_seq]
    }

    /// Entry i as a (still unit-norm) Fingerprint.
    pub fn entry_fingerprint(&self, i: usize) -> Fingerprint {
        Fingerprint {
            samples: self
                .entry_row(i)
                .iter()
                .map(|c| Complex64::new(c.re as f64, c.im as f64))
                .collect(),
        }
    }
}

/// Simulate and L2-normalize one dictionary row per valid grid combination.
pub fn build_dictionary(grid: &ParamGrid, schedule: &SequenceSchedule) -> Result<Dictionary> {
    grid.validate()?;
    schedule.validate()?;
    let params = grid.valid_combinations();
    if params.is_empty() {
        return Err(Error::InvalidConfig(
            "grid has no physical (t2 <= t1) combinations".into(),
        ));
    }
    let n_seq = schedule.n_reps();
    let rows: Vec<Vec<Complex32>> = params
        .par_iter()
        .map(|p| {
            let fp = simulate_fingerprint(p, schedule)?;
            let norm = fp.l2_norm();
            if norm == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "zero fingerprint for t1={} t2={} b1={}",
                    p.t1_ms, p.t2_ms, p.b1
                )));
            }
            Ok(fp
                .samples
                .iter()
                .map(|s| Complex32::new((s.re / norm) as f32, (s.im / norm) as f32))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(params.len() * n_seq);
    for row in rows {
        entries.extend_from_slice(&row);
    }
    Ok(Dictionary {
        entries,
        n_seq,
        params,
        schedule_digest: schedule.digest(),
    })
}

/// Magnitude of the complex inner product between the L2-normalized query
/// and entry i. f32 storage, f64 accumulation.
fn score_row(query: &[Complex64], row: &[Complex32]) -> f64 {
    let mut re = 0.0f64;
    let mut im = 0.0f64;
    for (q, d) in query.iter().zip(row) {
        // <q, d> with conjugation on the entry.
        let (dr, di) = (d.re as f64, d.im as f64);
        re += q.re * dr + q.im * di;
        im += q.im * dr - q.re * di;
    }
    // Clamp away f32 storage rounding; the exact value cannot exceed 1.
    (re * re + im * im).sqrt().min(1.0)
}

fn normalized_query(fp: &Fingerprint, n_seq: usize) -> Result<Vec<Complex64>> {
    if fp.len() != n_seq {
        return Err(Error::ShapeMismatch(format!(
            "query length {} != dictionary n_seq {}",
            fp.len(),
            n_seq
        )));
    }
    let norm = fp.l2_norm();
    if norm == 0.0 {
        return Err(Error::InvalidConfig("cannot match an all-zero query".into()));
    }
    Ok(fp.samples.iter().map(|s| s / norm).collect())
}

/// Argmax over all rows; ties break to the lowest index.
pub fn match_one(fp: &Fingerprint, dict: &Dictionary) -> Result<MatchResult> {
    let q = normalized_query(fp, dict.n_seq)?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..dict.n_entries() {
        let s = score_row(&q, dict.entry_row(i));
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(MatchResult {
        params: dict.params[best.0],
        score: best.1,
        index: best.0,
    })
}

/// Element-wise identical to repeated `match_one`, order preserved,
/// independent of worker count. `workers = 0` means the rayon default.
pub fn match_batch(
    fps: &[Fingerprint],
    dict: &Dictionary,
    workers: usize,
) -> Result<Vec<MatchResult>> {
    let run = || fps.par_iter().map(|fp| match_one(fp, dict)).collect();
    if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(run)
    }
}

// ---------------------------------------------------------------------------
// MRFD file format
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"MRFD";
const VERSION: u32 = 1;

impl Dictionary {
    /// Little-endian binary layout: magic "MRFD", version u32, n_entries
    /// u64, n_seq u64, schedule digest u64, then per entry 3 f64 params
    /// (t1, t2, b1), then all rows as interleaved (re, im) f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(self.n_entries() as u64).to_le_bytes())?;
        f.write_all(&(self.n_seq as u64).to_le_bytes())?;
        f.write_all(&self.schedule_digest.to_le_bytes())?;
        for p in &self.params {
            f.write_all(&p.t1_ms.to_le_bytes())?;
            f.write_all(&p.t2_ms.to_le_bytes())?;
            f.write_all(&p.b1.to_le_bytes())?;
        }
        for c in &self.entries {
            f.write_all(&c.re.to_le_bytes())?;
            f.write_all(&c.im.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dictionary> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an MRFD file".into()));
        }
        let version = read_u32(&mut f)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported MRFD version {version}")));
        }
        let n_entries = read_u64(&mut f)? as usize;
        let n_seq = read_u64(&mut f)? as usize;
        let schedule_digest = read_u64(&mut f)?;
        let mut params = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let t1 = read_f64(&mut f)?;
            let t2 = read_f64(&mut f)?;
            let b1 = read_f64(&mut f)?;
            params.push(TissueParams { t1_ms: t1, t2_ms: t2, b1 });
        }
        let mut entries = Vec::with_capacity(n_entries * n_seq);
        let mut buf = [0u8; 8];
        for _ in 0..n_entries * n_seq {
            f.read_exact(&mut buf)?;
            entries.push(Complex32::new(
                f32::from_le_bytes(buf[0..4].try_into().unwrap()),
                f32::from_le_bytes(buf[4..8].try_into().unwrap()),
            ));
        }
        Ok(Dictionary {
            entries,
            n_seq,
            params,
            schedule_digest,
        })
    }

    /// Load and check the stored digest against the given schedule.
    pub fn load_checked(path: &Path, schedule: &SequenceSchedule) -> Result<Dictionary> {
        let d = Self::load(path)?;
        if d.schedule_digest != schedule.digest() {
            return Err(Error::DigestMismatch(format!(
                "dictionary digest {:016x} != schedule digest {:016x}",
                d.schedule_digest,
                schedule.digest()
            )));
        }
        Ok(d)
    }
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(f: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
