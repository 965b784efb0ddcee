//! Brute-force isochromat Bloch simulation. This is the reference the EPG
//! engine is checked against; it shares no code with `epg` beyond the input
//! types. The per-TR unbalanced gradient is modeled as a uniform intra-voxel
//! dephasing spread of one full cycle (ideal spoiling gradient).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sim::{Fingerprint, SequenceSchedule, TissueParams};

struct Spin {
    mx: f64,
    my: f64,
    mz: f64,
}

/// Simulate with `n_spins` isochromats uniformly spread over one dephasing
/// cycle. 2000 spins are enough for 1e-3-level agreement on short trains.
pub fn simulate_isochromat(
    params: &TissueParams,
    schedule: &SequenceSchedule,
    n_spins: usize,
) -> Result<Fingerprint> {
    params.validate()?;
    schedule.validate()?;
    if n_spins < 2 {
        return Err(Error::InvalidConfig("need at least 2 spins".into()));
    }
    let mut spins: Vec<Spin> = (0..n_spins)
        .map(|_| Spin { mx: 0.0, my: 0.0, mz: 1.0 })
        .collect();
    // Per-TR dephasing angle of spin j.
    let theta: Vec<f64> = (0..n_spins)
        .map(|j| 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_spins as f64)
        .collect();

    if schedule.initial_inversion {
        for s in spins.iter_mut() {
            s.mz = -s.mz;
        }
        let e1 = (-schedule.inversion_delay_ms / params.t1_ms).exp();
        let e2 = (-schedule.inversion_delay_ms / params.t2_ms).exp();
        relax_all(&mut spins, e1, e2);
    }

    let mut samples = Vec::with_capacity(schedule.n_reps());
    for (fa_deg, tr_ms) in schedule
        .flip_angles_deg
        .iter()
        .zip(&schedule.repetition_times_ms)
    {
        let alpha = (fa_deg * params.b1).to_radians();
        let (sin_a, cos_a) = alpha.sin_cos();
        for s in spins.iter_mut() {
            // Rotation about x: My' = cos(a) My - sin(a) Mz, Mz' = sin(a) My + cos(a) Mz.
            let (my, mz) = (s.my, s.mz);
            s.my = cos_a * my - sin_a * mz;
            s.mz = sin_a * my + cos_a * mz;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for s in spins.iter() {
            acc += Complex64::new(s.mx, s.my);
        }
        samples.push(acc / n_spins as f64);

        let e1 = (-tr_ms / params.t1_ms).exp();
        let e2 = (-tr_ms / params.t2_ms).exp();
        relax_all(&mut spins, e1, e2);
        for (s, th) in spins.iter_mut().zip(&theta) {
            let (sin_t, cos_t) = th.sin_cos();
            let (mx, my) = (s.mx, s.my);
            s.mx = cos_t * mx - sin_t * my;
            s.my = sin_t * mx + cos_t * my;
        }
    }
    Ok(Fingerprint { samples })
}

fn relax_all(spins: &mut [Spin], e1: f64, e2: f64) {
    for s in spins.iter_mut() {
        s.mx *= e2;
        s.my *= e2;
        s.mz = s.mz * e1 + (1.0 - e1);
    }
}

/// RMS of the complex difference between two equal-length fingerprints.
pub fn rms_difference(a: &Fingerprint, b: &Fingerprint) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::epg;
    use crate::sim::{generate_schedule, FaPattern, ScheduleConfig};
    use rand::Rng;

    #[test]
    fn epg_matches_isochromat_oracle() {
        // 20 randomized (params, 50-pulse schedule) cases, 1e-3 RMS.
        let mut rng = crate::rng::seeded_rng(2024);
        for case in 0..20 {
            let sched = generate_schedule(&ScheduleConfig {
                n_reps: 50,
                seed: 1000 + case,
                initial_inversion: case % 2 == 0,
                pattern: if case % 3 == 0 {
                    FaPattern::UniformRandom
                } else {
                    FaPattern::SinusoidalLobes
                },
                ..ScheduleConfig::default()
            })
            .unwrap();
            let t1 = rng.gen_range(100.0..4500.0);
            let t2 = rng.gen_range(20.0..f64::min(800.0, t1));
            let b1 = rng.gen_range(0.7..1.3);
            let p = TissueParams::new(t1, t2, b1).unwrap();
            let fast = epg::simulate(&p, &sched, epg::DEFAULT_ORDERS).unwrap();
            let slow = simulate_isochromat(&p, &sched, 2000).unwrap();
            let rms = rms_difference(&fast, &slow);
            assert!(rms < 1e-3, "case {case}: rms {rms} (t1={t1}, t2={t2}, b1={b1})");
        }
    }

    #[test]
    fn oracle_first_sample_matches_sine() {
        let sched = generate_schedule(&ScheduleConfig {
            n_reps: 5,
            initial_inversion: false,
            ..ScheduleConfig::default()
        })
        .unwrap();
        let p = TissueParams::new(1000.0, 100.0, 1.0).unwrap();
        let fp = simulate_isochromat(&p, &sched, 500).unwrap();
        let expect = sched.flip_angles_deg[0].to_radians().sin();
        assert!((fp.samples[0].norm() - expect).abs() < 1e-12);
    }
}
