//! FISP-style fingerprint simulation: acquisition schedules, the EPG signal
//! engine, an independent isochromat Bloch reference, and noise augmentation.

pub mod bloch;
pub mod epg;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Per-repetition acquisition parameters plus the inversion preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSchedule {
    pub flip_angles_deg: Vec<f64>,
    pub repetition_times_ms: Vec<f64>,
    pub initial_inversion: bool,
    pub inversion_delay_ms: f64,
}

impl SequenceSchedule {
    pub fn n_reps(&self) -> usize {
        self.flip_angles_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.flip_angles_deg.is_empty() {
            return Err(Error::InvalidConfig("schedule has zero repetitions".into()));
        }
        if self.flip_angles_deg.len() != self.repetition_times_ms.len() {
            return Err(Error::InvalidConfig(format!(
                "flip angle count {} != TR count {}",
                self.flip_angles_deg.len(),
                self.repetition_times_ms.len()
            )));
        }
        if self.inversion_delay_ms < 0.0 {
            return Err(Error::InvalidConfig("inversion delay must be >= 0".into()));
        }
        for (i, tr) in self.repetition_times_ms.iter().enumerate() {
            if !tr.is_finite() || *tr <= 0.0 {
                return Err(Error::InvalidConfig(format!("TR[{i}] = {tr} is not positive")));
            }
        }
        Ok(())
    }

    /// 64-bit FNV-1a over the canonical little-endian encoding of the
    /// schedule. Used to tie dictionaries to the schedule that produced them.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.n_reps() as u64).to_le_bytes());
        for fa in &self.flip_angles_deg {
            eat(&fa.to_le_bytes());
        }
        for tr in &self.repetition_times_ms {
            eat(&tr.to_le_bytes());
        }
        eat(&[self.initial_inversion as u8]);
        eat(&self.inversion_delay_ms.to_le_bytes());
        h
    }

    /// Writes `index,fa_deg,tr_ms` rows plus a JSON sidecar
    /// (`<path>.json`) holding the inversion settings.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,fa_deg,tr_ms")?;
        for (i, (fa, tr)) in self
            .flip_angles_deg
            .iter()
            .zip(&self.repetition_times_ms)
            .enumerate()
        {
            writeln!(f, "{i},{fa},{tr}")?;
        }
        f.flush()?;
        let sidecar = SchedSidecar {
            initial_inversion: self.initial_inversion,
            inversion_delay_ms: self.inversion_delay_ms,
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut fas = Vec::new();
        let mut trs = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "index,fa_deg,tr_ms" {
                    return Err(Error::Format(format!("bad schedule CSV header: {line}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!("bad schedule CSV row: {line}")));
            }
            let fa: f64 = fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad fa_deg in row: {line}")))?;
            let tr: f64 = fields[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad tr_ms in row: {line}")))?;
            fas.push(fa);
            trs.push(tr);
        }
        let sidecar: SchedSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let sched = SequenceSchedule {
            flip_angles_deg: fas,
            repetition_times_ms: trs,
            initial_inversion: sidecar.initial_inversion,
            inversion_delay_ms: sidecar.inversion_delay_ms,
        };
        sched.validate()?;
        Ok(sched)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct SchedSidecar {
    initial_inversion: bool,
    inversion_delay_ms: f64,
}

/// Tissue description: relaxation times plus the relative transmit field
/// scale (1.0 = nominal flip angles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub b1: f64,
}

impl TissueParams {
    pub fn new(t1_ms: f64, t2_ms: f64, b1: f64) -> Result<Self> {
        let p = TissueParams { t1_ms, t2_ms, b1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1_ms > 0.0) || !(self.t2_ms > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "relaxation times must be positive (t1={}, t2={})",
                self.t1_ms, self.t2_ms
            )));
        }
        if self.t2_ms > self.t1_ms {
            return Err(Error::InvalidConfig(format!(
                "t2 ({}) > t1 ({}) is unphysical",
                self.t2_ms, self.t1_ms
            )));
        }
        if !(self.b1 >= 0.0) {
            return Err(Error::InvalidConfig(format!("b1 ({}) must be >= 0", self.b1)));
        }
        Ok(())
    }
}

/// Complex time signal of one voxel / one dictionary entry (M0-normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub samples: Vec<Complex64>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn peak_magnitude(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

/// Flip-angle pattern family for generated schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaPattern {
    /// Smooth sinusoidal lobes with randomized peak amplitudes, clipped to
    /// the configured range.
    SinusoidalLobes,
    /// Independent uniform draws in the configured range.
    UniformRandom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub n_reps: usize,
    pub fa_min_deg: f64,
    pub fa_max_deg: f64,
    pub tr_min_ms: f64,
    pub tr_max_ms: f64,
    pub pattern: FaPattern,
    pub seed: u64,
    pub initial_inversion: bool,
    pub inversion_delay_ms: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            n_reps: 3000,
            fa_min_deg: 5.0,
            fa_max_deg: 74.0,
            tr_min_ms: 12.0,
            tr_max_ms: 15.0,
            pattern: FaPattern::SinusoidalLobes,
            seed: 0,
            initial_inversion: true,
            inversion_delay_ms: 20.0,
        }
    }
}

pub fn generate_schedule(cfg: &ScheduleConfig) -> Result<SequenceSchedule> {
    if cfg.n_reps < 1 {
        return Err(Error::InvalidConfig("n_reps must be >= 1".into()));
    }
    if cfg.fa_min_deg > cfg.fa_max_deg {
        return Err(Error::InvalidConfig(format!(
            "fa_min ({}) > fa_max ({})",
            cfg.fa_min_deg, cfg.fa_max_deg
        )));
    }
    if cfg.tr_min_ms > cfg.tr_max_ms {
        return Err(Error::InvalidConfig(format!(
            "tr_min ({}) > tr_max ({})",
            cfg.tr_min_ms, cfg.tr_max_ms
        )));
    }
    if cfg.tr_min_ms <= 0.0 {
        return Err(Error::InvalidConfig("tr_min must be positive".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let fa_span = cfg.fa_max_deg - cfg.fa_min_deg;
    let flip_angles_deg: Vec<f64> = match cfg.pattern {
        FaPattern::UniformRandom => (0..cfg.n_reps)
            .map(|_| cfg.fa_min_deg + fa_span * rng.gen::<f64>())
            .collect(),
        FaPattern::SinusoidalLobes => {
            // Lobes of ~n/10 pulses (at least 8) with random peak heights.
            let lobe_len = (cfg.n_reps / 10).max(8);
            let mut fas = Vec::with_capacity(cfg.n_reps);
            'outer: loop {
                let peak: f64 = 0.3 + 0.7 * rng.gen::<f64>();
                for i in 0..lobe_len {
                    let envelope = (std::f64::consts::PI * i as f64 / lobe_len as f64).sin();
                    let fa = cfg.fa_min_deg + fa_span * peak * envelope;
                    fas.push(fa.clamp(cfg.fa_min_deg, cfg.fa_max_deg));
                    if fas.len() == cfg.n_reps {
                        break 'outer;
                    }
                }
            }
            fas
        }
    };
    let repetition_times_ms: Vec<f64> = (0..cfg.n_reps)
        .map(|_| cfg.tr_min_ms + (cfg.tr_max_ms - cfg.tr_min_ms) * rng.gen::<f64>())
        .collect();
    let sched = SequenceSchedule {
        flip_angles_deg,
        repetition_times_ms,
        initial_inversion: cfg.initial_inversion,
        inversion_delay_ms: cfg.inversion_delay_ms,
    };
    sched.validate()?;
    Ok(sched)
}

/// EPG simulation at the default dephasing-order truncation.
pub fn simulate_fingerprint(params: &TissueParams, schedule: &SequenceSchedule) -> Result<Fingerprint> {
    epg::simulate(params, schedule, epg::DEFAULT_ORDERS)
}

/// Additive complex Gaussian noise, std dev = peak |signal| / snr on each of
/// the real and imaginary parts. A zero input falls back to amplitude 1.0.
/// `snr = inf` is the noise-disabled convention and returns the input as is.
pub fn add_complex_noise(fp: &Fingerprint, snr: f64, seed: u64) -> Result<Fingerprint> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidConfig(format!("snr ({snr}) must be > 0")));
    }
    if snr.is_infinite() {
        return Ok(fp.clone());
    }
    let peak = fp.peak_magnitude();
    let sigma = if peak > 0.0 { peak / snr } else { 1.0 / snr };
    let mut rng = seeded_rng(seed);
    let samples = fp
        .samples
        .iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    Ok(Fingerprint { samples })
}
