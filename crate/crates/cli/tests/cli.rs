//! End-to-end tests of the `mrf` binary: exit codes, file outputs, and
//! agreement with the library.

use std::path::Path;
use std::process::{Command, Output};

use mrf_core::dict::Dictionary;
use mrf_core::sim::{generate_schedule, ScheduleConfig, SequenceSchedule};
use mrf_core::train::make_synthetic_slices;
use num_complex::Complex32;
use tempfile::TempDir;

fn mrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrf"))
        .args(args)
        .env_remove("MRF_THREADS")
        .output()
        .expect("spawn mrf")
}

fn ok(args: &[&str]) -> String {
    let out = mrf(args);
    assert!(
        out.status.success(),
        "mrf {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

const SMALL_GRID: &[&str] = &["--t1", "300:2000:10", "--t2", "30:200:8", "--n-reps", "40"];

#[test]
fn gen_dict_small_grid_loadable_with_matching_count() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "d.mrfd");
    let stdout = ok(&[&["gen-dict", "--out", &out], SMALL_GRID].concat());
    assert!(stdout.contains("80 entries"), "stdout: {stdout}");
    let dict = Dictionary::load(Path::new(&out)).unwrap();
    assert_eq!(dict.n_entries(), 80); // all 10x8 combinations valid (t2 < t1)
    assert_eq!(dict.n_seq(), 40);
}

#[test]
fn gen_dict_inverted_range_exits_2_naming_flag() {
    let dir = TempDir::new().unwrap();
    let out = mrf(&["gen-dict", "--out", &path(&dir, "d.mrfd"), "--t1", "3000:300:5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--t1"));
}

#[test]
fn gen_dict_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.mrfd"), path(&dir, "b.mrfd"));
    ok(&[&["gen-dict", "--out", &a], SMALL_GRID].concat());
    ok(&[&["gen-dict", "--out", &b], SMALL_GRID].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

fn write_query_csv(path: &str, rows: &[Vec<Complex32>]) {
    let mut text = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .flat_map(|c| [c.re.to_string(), c.im.to_string()])
            .collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn match_self_entries_score_near_one_and_workers_do_not_change_bytes() {
    let dir = TempDir::new().unwrap();
    let dict_path = path(&dir, "d.mrfd");
    ok(&[&["gen-dict", "--out", &dict_path], SMALL_GRID].concat());
    let dict = Dictionary::load(Path::new(&dict_path)).unwrap();

    let queries: Vec<Vec<Complex32>> = (0..dict.n_entries())
        .map(|i| dict.entry_row(i).to_vec())
        .collect();
    let q_path = path(&dir, "q.csv");
    write_query_csv(&q_path, &queries);

    let out1 = path(&dir, "m1.csv");
    let out2 = path(&dir, "m2.csv");
    ok(&["match", "--dict", &dict_path, "--input", &q_path, "--out", &out1]);
    ok(&["--workers", "2", "match", "--dict", &dict_path, "--input", &q_path, "--out", &out2]);
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

    for (i, line) in std::fs::read_to_string(&out1).unwrap().lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<usize>().unwrap(), i, "self-match index");
        let score: f64 = cells[4].parse().unwrap();
        assert!(score >= 1.0 - 1e-6, "entry {i} score {score}");
    }
}

#[test]
fn match_agrees_with_brute_force_oracle() {
    let dir = TempDir::new().unwrap();
    let dict_path = path(&dir, "d.mrfd");
    ok(&["gen-dict", "--out", &dict_path, "--t1", "200:3000:40", "--t2", "25:180:25", "--n-reps", "40"]);
    let dict = Dictionary::load(Path::new(&dict_path)).unwrap();
    assert_eq!(dict.n_entries(), 1000);

    let q_path = path(&dir, "q.csv");
    ok(&["simulate", "--out", &q_path, "--count", "100", "--n-reps", "40", "--snr", "20"]);
    let out = path(&dir, "m.csv");
    ok(&["match", "--dict", &dict_path, "--input", &q_path, "--out", &out]);

    // Independent naive scan over f64-upcast rows.
    let read_queries = std::fs::read_to_string(&q_path).unwrap();
    let mut qi = 0;
    for line in read_queries.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let q: Vec<num_complex::Complex64> = vals
            .chunks_exact(2)
            .map(|p| num_complex::Complex64::new(p[0], p[1]))
            .collect();
        let qnorm = q.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut best = (0usize, f64::NEG_INFINITY);
        for e in 0..dict.n_entries() {
            let s: num_complex::Complex64 = dict.entry_row(e)
                .iter()
                .zip(&q)
                .map(|(d, q)| num_complex::Complex64::new(d.re as f64, -(d.im as f64)) * (q / qnorm))
                .sum();
            let s = s.norm();
            if s > best.1 {
                best = (e, s);
            }
        }
        let match_line = std::fs::read_to_string(&out).unwrap();
        let cells: Vec<String> = match_line
            .lines()
            .nth(qi + 1)
            .unwrap()
            .split(',')
            .map(|s| s.to_string())
            .collect();
        assert_eq!(cells[0].parse::<usize>().unwrap(), best.0, "query {qi}");
        qi += 1;
    }
    assert_eq!(qi, 100);
}

#[test]
fn match_digest_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let dict_path = path(&dir, "d.mrfd");
    ok(&[&["gen-dict", "--out", &dict_path], SMALL_GRID].concat());
    // A schedule with a different seed has a different digest.
    let other = generate_schedule(&ScheduleConfig {
        n_reps: 40,
        seed: 99,
        ..ScheduleConfig::default()
    })
    .unwrap();
    let sched_path = path(&dir, "other.csv");
    other.save_csv(Path::new(&sched_path)).unwrap();

    let q_path = path(&dir, "q.csv");
    ok(&["simulate", "--out", &q_path, "--count", "2", "--n-reps", "40"]);
    let out = mrf(&[
        "match", "--dict", &dict_path, "--input", &q_path,
        "--out", &path(&dir, "m.csv"), "--schedule", &sched_path,
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_missing_weights_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = mrf(&["eval", "--weights", &path(&dir, "nope")]);
    assert_eq!(out.status.code(), Some(2));
}

const TINY_DATA: &[&str] = &["--slices", "3", "--height", "16", "--width", "16", "--n-reps", "60"];

#[test]
fn train_then_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let stem = path(&dir, "w");
    let hist = path(&dir, "h.csv");
    let stdout = ok(&[
        &["train", "--arch", "rnn", "--mode", "complex", "--out", &stem,
          "--history", &hist, "--epochs", "2"],
        TINY_DATA,
    ]
    .concat());
    let test_line = stdout.lines().find(|l| l.starts_with("test:")).unwrap().to_string();
    let hist_text = std::fs::read_to_string(&hist).unwrap();
    assert!(hist_text.starts_with("epoch,train_loss,val_loss"));
    assert_eq!(hist_text.lines().count(), 3);

    let stdout = ok(&[&["eval", "--weights", &stem], TINY_DATA].concat());
    // Same data + saved weights reproduce the training-time test metrics.
    assert!(stdout.contains(&test_line), "eval: {stdout}\ntrain: {test_line}");
}

fn read_pgm16(path: &str) -> (usize, usize, Vec<u16>) {
    let bytes = std::fs::read(path).unwrap();
    let header_end = bytes
        .windows(6)
        .position(|w| w == b"65535\n")
        .unwrap()
        + 6;
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    let mut lines = header.lines();
    assert_eq!(lines.next().unwrap(), "P5");
    let mut dims = lines.next().unwrap().split_whitespace();
    let w: usize = dims.next().unwrap().parse().unwrap();
    let h: usize = dims.next().unwrap().parse().unwrap();
    let px: Vec<u16> = bytes[header_end..]
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
        .collect();
    assert_eq!(px.len(), w * h);
    (h, w, px)
}

#[test]
fn maps_dims_ground_truth_and_windowing() {
    let dir = TempDir::new().unwrap();
    let dict_path = path(&dir, "d.mrfd");
    ok(&["gen-dict", "--out", &dict_path, "--t1", "300:2000:10", "--t2", "30:200:8", "--n-reps", "60"]);
    let maps_dir = path(&dir, "maps");
    ok(&[&["maps", "--dict", &dict_path, "--out-dir", &maps_dir], TINY_DATA].concat());

    let (h, w, gt_px) = read_pgm16(&format!("{maps_dir}/gt_t1.pgm"));
    assert_eq!((h, w), (16, 16));
    for name in ["pred_t1", "err_t1", "gt_t2", "pred_t2", "err_t2"] {
        let (h2, w2, _) = read_pgm16(&format!("{maps_dir}/{name}.pgm"));
        assert_eq!((h2, w2), (16, 16));
    }

    // Ground truth equals the generating phantom parameters exactly, and the
    // PGM applies the 0-4000 ms window.
    let sched = generate_schedule(&ScheduleConfig {
        n_reps: 60,
        seed: 0,
        ..ScheduleConfig::default()
    })
    .unwrap();
    let slices = make_synthetic_slices(3, 16, 16, &sched, 0, Some(40.0)).unwrap();
    let phantom = &slices[2].phantom;
    let csv = std::fs::read_to_string(format!("{maps_dir}/maps.csv")).unwrap();
    let mut n_rows = 0;
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let (r, c): (usize, usize) = (cells[0].parse().unwrap(), cells[1].parse().unwrap());
        let p = phantom.at(r, c).expect("csv row must be foreground");
        assert_eq!(cells[2].parse::<f64>().unwrap(), p.t1_ms);
        assert_eq!(cells[4].parse::<f64>().unwrap(), p.t2_ms);
        let expect_px = ((p.t1_ms / 4000.0).clamp(0.0, 1.0) * 65535.0).round() as u16;
        assert_eq!(gt_px[r * 16 + c], expect_px);
        let err_pct: f64 = cells[6].parse().unwrap();
        assert!((0.0..=100.0).contains(&err_pct));
        n_rows += 1;
    }
    assert_eq!(n_rows, phantom.foreground_count());
}

#[test]
fn config_file_values_used_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg_path = path(&dir, "mrf.cfg");
    std::fs::write(&cfg_path, "t1=300:2000:5\nt2=30:200:4\nn-reps=30\n").unwrap();
    let out_a = path(&dir, "a.mrfd");
    ok(&["--config", &cfg_path, "gen-dict", "--out", &out_a]);
    assert_eq!(Dictionary::load(Path::new(&out_a)).unwrap().n_entries(), 20);

    // Flag overrides the file's t1 axis.
    let out_b = path(&dir, "b.mrfd");
    ok(&["--config", &cfg_path, "gen-dict", "--out", &out_b, "--t1", "300:2000:7"]);
    assert_eq!(Dictionary::load(Path::new(&out_b)).unwrap().n_entries(), 28);
}

#[test]
fn simulate_is_deterministic_and_matches_schedule_length() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    ok(&["simulate", "--out", &a, "--count", "3", "--n-reps", "25", "--seed", "4"]);
    ok(&["simulate", "--out", &b, "--count", "3", "--n-reps", "25", "--seed", "4"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    let first = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(first.split(',').count(), 50);
}

#[test]
fn compare_trains_and_labels_rows() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "metrics.csv");
    let stdout = ok(&[
        &["compare", "--out", &out, "--epochs", "1",
          "--slices", "3", "--height", "16", "--width", "16", "--n-reps", "300"],
        &[][..],
    ]
    .concat());
    for label in ["CNN Magnitude", "RNN Magnitude", "CNN Complex", "RNN Complex"] {
        assert!(stdout.contains(label), "missing {label} in:\n{stdout}");
    }
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("arch,mode,mu_t1,sigma_t1,mu_t2,sigma_t2,n"));
    assert_eq!(csv.lines().count(), 5);
}

/// Unknown schedule file for gen-dict is an I/O-style config failure.
#[test]
fn gen_dict_missing_schedule_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = mrf(&["gen-dict", "--out", &path(&dir, "d.mrfd"), "--schedule", &path(&dir, "nope.csv")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schedule_round_trips_through_csv() {
    let dir = TempDir::new().unwrap();
    let dict_path = path(&dir, "d.mrfd");
    let sched_path = path(&dir, "s.csv");
    ok(&[
        &["gen-dict", "--out", &dict_path, "--schedule-out", &sched_path],
        SMALL_GRID,
    ]
    .concat());
    let loaded = SequenceSchedule::load_csv(Path::new(&sched_path)).unwrap();
    let expect = generate_schedule(&ScheduleConfig {
        n_reps: 40,
        seed: 0,
        ..ScheduleConfig::default()
    })
    .unwrap();
    assert_eq!(loaded.digest(), expect.digest());

    // The matching schedule passes the digest check.
    let q_path = path(&dir, "q.csv");
    ok(&["simulate", "--out", &q_path, "--count", "2", "--n-reps", "40"]);
    ok(&[
        "match", "--dict", &dict_path, "--input", &q_path,
        "--out", &path(&dir, "m.csv"), "--schedule", &sched_path,
    ]);
}
