//! One function per subcommand. All take already-resolved parameters and
//! return `mrf_core::Result` so `main` can map errors to exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mrf_core::dict::{build_dictionary, match_batch, Dictionary, ParamGrid};
use mrf_core::model::{build_cnn, build_rnn, CnnSpec, InputMode, Model, RnnSpec};
use mrf_core::nn::AdamHyper;
use mrf_core::rng::{seeded_rng, substream};
use mrf_core::sim::{
    add_complex_noise, generate_schedule, simulate_fingerprint, Fingerprint, ScheduleConfig,
    SequenceSchedule, TissueParams,
};
use mrf_core::train::{
    compare_architectures, evaluate_on_split, make_synthetic_slices, train, write_history_csv,
    write_metrics_csv, Dataset, ModelScale, Slice, Split, TrainConfig,
};
use mrf_core::{Error, Result};
use rand::Rng;

use crate::fpcsv;
use crate::pgm::write_pgm16;

pub const T1_WINDOW_MS: (f64, f64) = (0.0, 4000.0);
pub const T2_WINDOW_MS: (f64, f64) = (0.0, 600.0);
pub const ERR_WINDOW_PCT: (f64, f64) = (0.0, 100.0);

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// `min:max:count` axis specification.
pub fn parse_axis(spec: &str, flag: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "--{flag}: expected min:max:count, got {spec:?}"
        )));
    }
    let min: f64 = parts[0]
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("--{flag} min: {e}")))?;
    let max: f64 = parts[1]
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("--{flag} max: {e}")))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("--{flag} count: {e}")))?;
    if count == 0 {
        return Err(Error::InvalidConfig(format!("--{flag}: count must be >= 1")));
    }
    if min > max || (count > 1 && min == max) {
        return Err(Error::InvalidConfig(format!(
            "--{flag}: range must be increasing, got {spec:?}"
        )));
    }
    Ok(ParamGrid::linspace(min, max, count))
}

#[derive(Debug, Clone)]
pub struct DataParams {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub n_reps: usize,
    pub snr: Option<f64>,
    pub data_seed: u64,
    pub schedule_seed: u64,
}

pub fn build_schedule(n_reps: usize, seed: u64) -> Result<SequenceSchedule> {
    generate_schedule(&ScheduleConfig {
        n_reps,
        seed,
        ..ScheduleConfig::default()
    })
}

pub fn build_slices(p: &DataParams) -> Result<(SequenceSchedule, Vec<Slice>)> {
    let schedule = build_schedule(p.n_reps, p.schedule_seed)?;
    let slices = make_synthetic_slices(p.slices, p.height, p.width, &schedule, p.data_seed, p.snr)?;
    Ok((schedule, slices))
}

pub fn build_dataset(p: &DataParams) -> Result<(SequenceSchedule, Dataset)> {
    let (schedule, slices) = build_slices(p)?;
    let data = Dataset::from_slices(&slices)?;
    Ok((schedule, data))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn load_model(stem: &Path) -> Result<Model> {
    require_file(&stem.with_extension("mrfw"), "weights file")?;
    require_file(&stem.with_extension("json"), "model descriptor")?;
    Model::load(stem)
}

fn print_metrics(label: &str, m: &mrf_core::train::Metrics) {
    println!(
        "{label}: T1 {:.1} ± {:.1} ms, T2 {:.1} ± {:.1} ms (n={})",
        m.mu_abs_t1_ms, m.sigma_abs_t1_ms, m.mu_abs_t2_ms, m.sigma_abs_t2_ms, m.n_data
    );
}

// ---------------------------------------------------------------------------
// gen-dict
// ---------------------------------------------------------------------------

pub struct GenDictParams {
    pub out: PathBuf,
    pub t1_axis: Vec<f64>,
    pub t2_axis: Vec<f64>,
    pub b1_axis: Vec<f64>,
    pub n_reps: usize,
    pub schedule_seed: u64,
    pub schedule_in: Option<PathBuf>,
    pub schedule_out: Option<PathBuf>,
}

pub fn cmd_gen_dict(p: &GenDictParams) -> Result<()> {
    let schedule = match &p.schedule_in {
        Some(path) => {
            require_file(path, "schedule file")?;
            SequenceSchedule::load_csv(path)?
        }
        None => build_schedule(p.n_reps, p.schedule_seed)?,
    };
    let grid = ParamGrid {
        t1_values_ms: p.t1_axis.clone(),
        t2_values_ms: p.t2_axis.clone(),
        b1_values: p.b1_axis.clone(),
    };
    grid.validate()?;
    let dict = build_dictionary(&grid, &schedule)?;
    dict.save(&p.out)?;
    if let Some(path) = &p.schedule_out {
        schedule.save_csv(path)?;
    }
    let max_norm_dev = (0..dict.n_entries())
        .map(|i| {
            let n: f64 = dict
                .entry_row(i)
                .iter()
                .map(|c| c.norm_sqr() as f64)
                .sum::<f64>()
                .sqrt();
            (n - 1.0).abs()
        })
        .fold(0.0, f64::max);
    println!(
        "wrote {}: {} entries, n_seq {}, max |row norm - 1| = {:.2e}",
        p.out.display(),
        dict.n_entries(),
        dict.n_seq(),
        max_norm_dev
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval / compare
// ---------------------------------------------------------------------------

pub struct TrainParams {
    pub arch: String, // "RNN" | "CNN"
    pub mode: InputMode,
    pub scale: ModelScale,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
    pub data: DataParams,
    pub cfg: TrainConfig,
}

pub fn build_model(
    arch: &str,
    mode: InputMode,
    scale: ModelScale,
    n_seq: usize,
    seed: u64,
) -> Result<Model> {
    match (scale, arch) {
        (ModelScale::Paper, "RNN") => build_rnn(&RnnSpec {
            seed,
            ..RnnSpec::paper_default(mode)
        }),
        (ModelScale::Paper, "CNN") => build_cnn(&CnnSpec {
            seed,
            ..CnnSpec::paper_default(mode)
        }),
        (ModelScale::Desk, "RNN") => build_rnn(&RnnSpec {
            seed,
            ..RnnSpec::desk_scale(mode, n_seq)
        }),
        (ModelScale::Desk, "CNN") => build_cnn(&CnnSpec {
            seed,
            ..CnnSpec::desk_scale(mode, n_seq)
        }),
        (_, other) => Err(Error::InvalidConfig(format!(
            "--arch must be rnn or cnn, got {other}"
        ))),
    }
}

pub fn cmd_train(p: &TrainParams) -> Result<()> {
    let (_, data) = build_dataset(&p.data)?;
    let model = build_model(&p.arch, p.mode, p.scale, data.n_seq, p.cfg.seed)?;
    let result = train(model, &data, &p.cfg)?;
    result.model.save(&p.out)?;
    if let Some(path) = &p.history {
        write_history_csv(path, &result.history)?;
    }
    let stats = result.history[result.best_epoch];
    println!(
        "trained {} {} ({} epochs): best epoch {} (val loss {:.6e}), weights at {}",
        p.arch,
        p.mode.label(),
        result.history.len(),
        result.best_epoch,
        stats.val_loss,
        p.out.display()
    );
    let m = evaluate_on_split(&result.model, &data, Split::Test)?;
    print_metrics("test", &m);
    Ok(())
}

pub fn cmd_eval(weights: &Path, data_params: &DataParams) -> Result<()> {
    let model = load_model(weights)?;
    let (_, data) = build_dataset(data_params)?;
    if model.n_seq() != data.n_seq {
        return Err(Error::InvalidConfig(format!(
            "model expects n_seq {}, dataset has {}",
            model.n_seq(),
            data.n_seq
        )));
    }
    let m = evaluate_on_split(&model, &data, Split::Test)?;
    print_metrics("test", &m);
    Ok(())
}

pub struct CompareParams {
    pub scale: ModelScale,
    pub out: Option<PathBuf>,
    pub data: DataParams,
    pub cfg: TrainConfig,
}

pub fn cmd_compare(p: &CompareParams) -> Result<()> {
    let (_, data) = build_dataset(&p.data)?;
    let rows = compare_architectures(&data, &p.cfg, p.scale)?;
    print!("{}", mrf_core::train::format_report(&rows));
    if let Some(path) = &p.out {
        write_metrics_csv(path, &rows)?;
        println!("metrics written to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub struct SimulateParams {
    pub out: PathBuf,
    pub truth_out: Option<PathBuf>,
    pub count: usize,
    pub n_reps: usize,
    pub schedule_seed: u64,
    pub seed: u64,
    pub snr: Option<f64>,
}

/// Random valid tissue parameters, simulated (optionally noisy) and written
/// as a fingerprint CSV suitable for `mrf match --input`.
pub fn cmd_simulate(p: &SimulateParams) -> Result<()> {
    if p.count == 0 {
        return Err(Error::InvalidConfig("--count must be >= 1".into()));
    }
    let schedule = build_schedule(p.n_reps, p.schedule_seed)?;
    let mut rng = seeded_rng(p.seed);
    let mut fps = Vec::with_capacity(p.count);
    let mut truths = Vec::with_capacity(p.count);
    for i in 0..p.count {
        let t1 = rng.gen_range(200.0..4000.0);
        let params = TissueParams {
            t1_ms: t1,
            t2_ms: rng.gen_range(20.0..f64::min(600.0, t1)),
            b1: 1.0,
        };
        let fp = simulate_fingerprint(&params, &schedule)?;
        let fp = match p.snr {
            Some(snr) => add_complex_noise(&fp, snr, substream(p.seed, i as u64).gen())?,
            None => fp,
        };
        fps.push(fp);
        truths.push(params);
    }
    fpcsv::write_fingerprints(&p.out, &fps)?;
    if let Some(path) = &p.truth_out {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,t1_ms,t2_ms,b1")?;
        for (i, t) in truths.iter().enumerate() {
            writeln!(f, "{i},{},{},{}", t.t1_ms, t.t2_ms, t.b1)?;
        }
        f.flush()?;
    }
    println!("wrote {} fingerprints (n_seq {}) to {}", p.count, p.n_reps, p.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// match
// ---------------------------------------------------------------------------

pub struct MatchParams {
    pub dict: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub schedule: Option<PathBuf>,
    pub workers: usize,
}

pub fn cmd_match(p: &MatchParams) -> Result<()> {
    require_file(&p.dict, "dictionary file")?;
    require_file(&p.input, "fingerprint file")?;
    let dict = match &p.schedule {
        Some(path) => {
            require_file(path, "schedule file")?;
            let schedule = SequenceSchedule::load_csv(path)?;
            Dictionary::load_checked(&p.dict, &schedule)?
        }
        None => Dictionary::load(&p.dict)?,
    };
    let fps = fpcsv::read_fingerprints(&p.input)?;
    let results = match_batch(&fps, &dict, p.workers)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&p.out)?);
    writeln!(f, "index,t1_ms,t2_ms,b1,score")?;
    for r in &results {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.index, r.params.t1_ms, r.params.t2_ms, r.params.b1, r.score
        )?;
    }
    f.flush()?;
    println!(
        "matched {} queries against {} entries, results at {}",
        fps.len(),
        dict.n_entries(),
        p.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

pub struct BenchParams {
    pub out: PathBuf,
    pub sizes: Vec<usize>,
    pub n_reps: usize,
    pub n_queries: usize,
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Grid with `size / 100` T1 values and 100 T2 values; the ranges do not
/// overlap (T2 max < T1 min), so every combination is valid and the entry
/// count is exact.
pub fn bench_grid(size: usize) -> Result<ParamGrid> {
    if size < 100 || size % 100 != 0 {
        return Err(Error::InvalidConfig(format!(
            "--sizes entries must be positive multiples of 100, got {size}"
        )));
    }
    Ok(ParamGrid {
        t1_values_ms: ParamGrid::linspace(700.0, 3000.0, size / 100),
        t2_values_ms: ParamGrid::linspace(30.0, 600.0, 100),
        b1_values: vec![1.0],
    })
}

pub struct BenchRow {
    pub method: &'static str,
    pub dict_entries: usize,
    pub per_query_us: f64,
}

pub fn run_bench(p: &BenchParams) -> Result<Vec<BenchRow>> {
    if p.sizes.len() < 3 {
        return Err(Error::InvalidConfig("--sizes needs at least 3 entries".into()));
    }
    if p.reps < 5 {
        return Err(Error::InvalidConfig("--reps must be >= 5".into()));
    }
    let schedule = build_schedule(p.n_reps, p.seed)?;

    // Noisy queries drawn from the bench parameter ranges.
    let mut rng = seeded_rng(p.seed);
    let queries: Vec<Fingerprint> = (0..p.n_queries)
        .map(|i| {
            let params = TissueParams {
                t1_ms: rng.gen_range(700.0..3000.0),
                t2_ms: rng.gen_range(30.0..600.0),
                b1: 1.0,
            };
            let fp = simulate_fingerprint(&params, &schedule)?;
            add_complex_noise(&fp, 40.0, substream(p.seed, i as u64).gen())
        })
        .collect::<Result<_>>()?;

    let rnn = build_model("RNN", InputMode::Complex, ModelScale::Desk, p.n_reps, p.seed)?;
    let cnn = build_model("CNN", InputMode::Complex, ModelScale::Desk, p.n_reps, p.seed)?;

    let time_median = |mut run: Box<dyn FnMut() -> Result<()> + '_>| -> Result<f64> {
        let mut times = Vec::with_capacity(p.reps);
        for _ in 0..p.reps {
            let t0 = Instant::now();
            run()?;
            times.push(t0.elapsed().as_secs_f64() * 1e6 / p.n_queries as f64);
        }
        Ok(median(times))
    };

    let mut rows = Vec::new();
    for &size in &p.sizes {
        let grid = bench_grid(size)?;
        let dict = build_dictionary(&grid, &schedule)?;
        let n = dict.n_entries();
        let us = time_median(Box::new(|| match_batch(&queries, &dict, p.workers).map(|_| ())))?;
        rows.push(BenchRow { method: "match", dict_entries: n, per_query_us: us });
        let us = time_median(Box::new(|| rnn.predict_batch(&queries).map(|_| ())))?;
        rows.push(BenchRow { method: "rnn", dict_entries: n, per_query_us: us });
        let us = time_median(Box::new(|| cnn.predict_batch(&queries).map(|_| ())))?;
        rows.push(BenchRow { method: "cnn", dict_entries: n, per_query_us: us });
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method,dict_entries,per_query_us")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.method, r.dict_entries, r.per_query_us)?;
    }
    f.flush()?;
    Ok(())
}

pub fn cmd_bench(p: &BenchParams) -> Result<()> {
    let rows = run_bench(p)?;
    write_bench_csv(&p.out, &rows)?;
    for r in &rows {
        println!("{:<6} {:>8} entries  {:>10.1} us/query", r.method, r.dict_entries, r.per_query_us);
    }
    println!("timings written to {}", p.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// maps
// ---------------------------------------------------------------------------

pub struct MapsParams {
    pub weights: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub data: DataParams,
    pub workers: usize,
}

pub fn cmd_maps(p: &MapsParams) -> Result<()> {
    let (schedule, slices) = build_slices(&p.data)?;
    if p.data.slices < 3 {
        return Err(Error::InvalidConfig("--slices must be >= 3".into()));
    }
    let slice = slices.last().unwrap(); // the test slice
    let (h, w) = (slice.phantom.height, slice.phantom.width);

    let fg: Vec<usize> = (0..h * w)
        .filter(|&i| slice.phantom.voxels[i].is_some())
        .collect();
    let fps: Vec<Fingerprint> = fg
        .iter()
        .map(|&i| slice.fingerprints[i].clone().unwrap())
        .collect();

    let preds: Vec<(f64, f64)> = match (&p.weights, &p.dict) {
        (Some(stem), None) => {
            let model = load_model(stem)?;
            if model.n_seq() != schedule.n_reps() {
                return Err(Error::InvalidConfig(format!(
                    "model expects n_seq {}, schedule has {}",
                    model.n_seq(),
                    schedule.n_reps()
                )));
            }
            model.predict_batch(&fps)?
        }
        (None, Some(path)) => {
            require_file(path, "dictionary file")?;
            let dict = Dictionary::load_checked(path, &schedule)?;
            match_batch(&fps, &dict, p.workers)?
                .into_iter()
                .map(|r| (r.params.t1_ms, r.params.t2_ms))
                .collect()
        }
        _ => {
            return Err(Error::InvalidConfig(
                "maps needs exactly one of --weights or --dict".into(),
            ))
        }
    };

    std::fs::create_dir_all(&p.out_dir)?;
    let mut gt_t1 = vec![0.0; h * w];
    let mut gt_t2 = vec![0.0; h * w];
    let mut pred_t1 = vec![0.0; h * w];
    let mut pred_t2 = vec![0.0; h * w];
    let mut err_t1 = vec![0.0; h * w];
    let mut err_t2 = vec![0.0; h * w];
    let rel_err_pct = |pred: f64, gt: f64| (100.0 * (pred - gt).abs() / gt).min(100.0);
    for (k, &i) in fg.iter().enumerate() {
        let params = slice.phantom.voxels[i].unwrap();
        gt_t1[i] = params.t1_ms;
        gt_t2[i] = params.t2_ms;
        pred_t1[i] = preds[k].0;
        pred_t2[i] = preds[k].1;
        err_t1[i] = rel_err_pct(preds[k].0, params.t1_ms);
        err_t2[i] = rel_err_pct(preds[k].1, params.t2_ms);
    }

    for (name, vals, window) in [
        ("gt_t1", &gt_t1, T1_WINDOW_MS),
        ("pred_t1", &pred_t1, T1_WINDOW_MS),
        ("err_t1", &err_t1, ERR_WINDOW_PCT),
        ("gt_t2", &gt_t2, T2_WINDOW_MS),
        ("pred_t2", &pred_t2, T2_WINDOW_MS),
        ("err_t2", &err_t2, ERR_WINDOW_PCT),
    ] {
        write_pgm16(
            &p.out_dir.join(format!("{name}.pgm")),
            vals,
            h,
            w,
            window.0,
            window.1,
        )?;
    }

    let mut f = std::io::BufWriter::new(std::fs::File::create(p.out_dir.join("maps.csv"))?);
    writeln!(
        f,
        "row,col,gt_t1_ms,pred_t1_ms,gt_t2_ms,pred_t2_ms,rel_err_t1_pct,rel_err_t2_pct"
    )?;
    for &i in &fg {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            i / w,
            i % w,
            gt_t1[i],
            pred_t1[i],
            gt_t2[i],
            pred_t2[i],
            err_t1[i],
            err_t2[i]
        )?;
    }
    f.flush()?;
    println!(
        "wrote {}x{} maps ({} foreground voxels) to {}",
        h,
        w,
        fg.len(),
        p.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// helpers for main
// ---------------------------------------------------------------------------

pub fn adam_with_lr(lr: f64) -> AdamHyper {
    AdamHyper {
        lr,
        ..AdamHyper::default()
    }
}
