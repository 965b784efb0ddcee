//! Randomized property tests for structural invariants.

use mrf_core::dict::{build_dictionary, match_one, ParamGrid};
use mrf_core::nn::layers::{reshape_chunks, reshape_chunks_inverse, ChunkLayout};
use mrf_core::nn::Tensor;
use mrf_core::sim::{generate_schedule, simulate_fingerprint, Fingerprint, ScheduleConfig, TissueParams};
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Chunking then un-chunking is the identity for both layouts.
    #[test]
    fn reshape_chunks_round_trips(
        b in 1usize..4,
        n_chunks in 1usize..6,
        chunk_len in 1usize..8,
        c in 1usize..3,
        interleaved in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let t = n_chunks * chunk_len;
        let layout = if interleaved { ChunkLayout::Interleaved } else { ChunkLayout::Contiguous };
        let mut x = Tensor::zeros(&[b, t, c]);
        let mut state = seed | 1;
        for v in x.data.iter_mut() {
            // Cheap deterministic pseudo-random fill.
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
        let y = reshape_chunks(&x, n_chunks, layout).unwrap();
        prop_assert_eq!(y.shape(), &[b, n_chunks, chunk_len * c]);
        let back = reshape_chunks_inverse(&y, x.shape(), layout).unwrap();
        prop_assert_eq!(back.data, x.data);
    }
}

fn small_dict() -> mrf_core::dict::Dictionary {
    let schedule = generate_schedule(&ScheduleConfig {
        n_reps: 30,
        seed: 12,
        ..ScheduleConfig::default()
    })
    .unwrap();
    let grid = ParamGrid {
        t1_values_ms: ParamGrid::linspace(300.0, 2500.0, 8),
        t2_values_ms: ParamGrid::linspace(30.0, 250.0, 6),
        b1_values: vec![1.0],
    };
    build_dictionary(&grid, &schedule).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Matching is invariant to any non-zero complex scaling of the query.
    #[test]
    fn match_is_scale_invariant(
        t1 in 250.0f64..2800.0,
        t2_frac in 0.05f64..0.9,
        scale_re in -3.0f64..3.0,
        scale_im in -3.0f64..3.0,
    ) {
        prop_assume!(scale_re.abs() + scale_im.abs() > 1e-3);
        let dict = small_dict();
        let schedule = generate_schedule(&ScheduleConfig {
            n_reps: 30,
            seed: 12,
            ..ScheduleConfig::default()
        })
        .unwrap();
        let t2 = (t2_frac * t1).clamp(15.0, 280.0);
        let fp = simulate_fingerprint(
            &TissueParams { t1_ms: t1, t2_ms: t2, b1: 1.0 },
            &schedule,
        )
        .unwrap();
        let s = Complex64::new(scale_re, scale_im);
        let scaled = Fingerprint {
            samples: fp.samples.iter().map(|v| v * s).collect(),
        };
        let a = match_one(&fp, &dict).unwrap();
        let b = match_one(&scaled, &dict).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert!((a.score - b.score).abs() < 1e-9);
    }
}
