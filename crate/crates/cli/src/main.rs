//! `mrf` — batch entry point for the fingerprinting pipeline: dictionary
//! generation, synthetic training, evaluation, matching, benchmarking, and
//! parameter-map emission.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config validation, 3
//! data-consistency (schedule digest) failure.

mod cfg;
mod commands;
mod fpcsv;
mod pgm;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrf_core::model::InputMode;
use mrf_core::train::{ModelScale, TrainConfig};
use mrf_core::{Error, Result};

use cfg::FileCfg;
use commands::*;

#[derive(Parser)]
#[command(name = "mrf", version, about = "MR fingerprinting toolkit")]
struct Cli {
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Defaults to $MRF_THREADS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Rnn,
    Cnn,
}

impl ArchArg {
    fn name(self) -> &'static str {
        match self {
            ArchArg::Rnn => "RNN",
            ArchArg::Cnn => "CNN",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Magnitude,
    Complex,
}

impl From<ModeArg> for InputMode {
    fn from(m: ModeArg) -> InputMode {
        match m {
            ModeArg::Magnitude => InputMode::Magnitude,
            ModeArg::Complex => InputMode::Complex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for ModelScale {
    fn from(s: ScaleArg) -> ModelScale {
        match s {
            ScaleArg::Desk => ModelScale::Desk,
            ScaleArg::Paper => ModelScale::Paper,
        }
    }
}

/// Synthetic dataset options shared by train/eval/compare/maps.
#[derive(Args)]
struct DataArgs {
    /// Number of phantom slices (last two become val/test).
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Sequence length (number of repetitions).
    #[arg(long)]
    n_reps: Option<usize>,
    /// Additive-noise SNR; use --no-noise for clean signals.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    schedule_seed: Option<u64>,
}

impl DataArgs {
    fn resolve(self, cfg: &FileCfg) -> Result<DataParams> {
        let snr = cfg.pick(self.snr, "snr", 40.0)?;
        Ok(DataParams {
            slices: cfg.pick(self.slices, "slices", 8)?,
            height: cfg.pick(self.height, "height", 64)?,
            width: cfg.pick(self.width, "width", 64)?,
            n_reps: cfg.pick(self.n_reps, "n-reps", 300)?,
            snr: if self.no_noise { None } else { Some(snr) },
            data_seed: cfg.pick(self.data_seed, "data-seed", 0)?,
            schedule_seed: cfg.pick(self.schedule_seed, "schedule-seed", 0)?,
        })
    }
}

/// Optimizer/loop options shared by train and compare.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn resolve(self, cfg: &FileCfg) -> Result<TrainConfig> {
        let out = TrainConfig {
            epochs: cfg.pick(self.epochs, "epochs", 100)?,
            batch_size: cfg.pick(self.batch_size, "batch-size", 64)?,
            adam: adam_with_lr(cfg.pick(self.lr, "lr", 1e-3)?),
            seed: cfg.pick(self.seed, "seed", 0)?,
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a fingerprint dictionary over a (T1, T2, B1) grid.
    GenDict {
        #[arg(long)]
        out: Option<PathBuf>,
        /// T1 axis as min:max:count (ms).
        #[arg(long)]
        t1: Option<String>,
        /// T2 axis as min:max:count (ms).
        #[arg(long)]
        t2: Option<String>,
        /// B1 axis as min:max:count.
        #[arg(long)]
        b1: Option<String>,
        #[arg(long)]
        n_reps: Option<usize>,
        #[arg(long)]
        schedule_seed: Option<u64>,
        /// Load this schedule CSV instead of generating one.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Also write the schedule used as CSV.
        #[arg(long)]
        schedule_out: Option<PathBuf>,
    },
    /// Train one network on synthetic phantom slices.
    Train {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// Output stem; writes <stem>.mrfw and <stem>.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-epoch loss CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate saved weights on the synthetic test split.
    Eval {
        /// Weights stem (as written by train).
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train and compare {CNN, RNN} x {magnitude, complex}.
    Compare {
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// Optional metrics CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Simulate random noisy query fingerprints to a CSV.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional ground-truth parameter CSV.
        #[arg(long)]
        truth_out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        n_reps: Option<usize>,
        #[arg(long)]
        schedule_seed: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        no_noise: bool,
    },
    /// Template-match fingerprints against a dictionary.
    Match {
        #[arg(long)]
        dict: PathBuf,
        /// Fingerprint CSV (one per line, interleaved re,im values).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Verify the dictionary was built from this schedule CSV.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Time template matching vs network inference across dictionary sizes.
    Bench {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated dictionary sizes (multiples of 100).
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        n_reps: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
        /// Timing repetitions per row (median reported, min 5).
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct the test slice and emit parameter/error maps.
    Maps {
        /// Weights stem for network reconstruction.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Dictionary for template-matching reconstruction.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileCfg::load(cli.config.as_deref())?;
    let workers = match cli.workers {
        Some(w) => w,
        None => match std::env::var("MRF_THREADS") {
            Ok(v) => v
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("MRF_THREADS={v}: {e}")))?,
            Err(_) => 0,
        },
    };
    if workers > 0 {
        // Best effort: later commands fall back to the default pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    match cli.command {
        Command::GenDict {
            out,
            t1,
            t2,
            b1,
            n_reps,
            schedule_seed,
            schedule,
            schedule_out,
        } => {
            let t1 = cfg.pick(t1, "t1", "100:3000:30".into())?;
            let t2 = cfg.pick(t2, "t2", "20:300:20".into())?;
            let b1 = cfg.pick(b1, "b1", "1:1:1".into())?;
            cmd_gen_dict(&GenDictParams {
                out: cfg.pick_required(out, "out")?,
                t1_axis: parse_axis(&t1, "t1")?,
                t2_axis: parse_axis(&t2, "t2")?,
                b1_axis: parse_axis(&b1, "b1")?,
                n_reps: cfg.pick(n_reps, "n-reps", 300)?,
                schedule_seed: cfg.pick(schedule_seed, "schedule-seed", 0)?,
                schedule_in: schedule,
                schedule_out,
            })
        }
        Command::Train {
            arch,
            mode,
            scale,
            out,
            history,
            data,
            train,
        } => cmd_train(&TrainParams {
            arch: arch.name().into(),
            mode: mode.into(),
            scale: scale.into(),
            out: cfg.pick_required(out, "out")?,
            history,
            data: data.resolve(&cfg)?,
            cfg: train.resolve(&cfg)?,
        }),
        Command::Eval { weights, data } => cmd_eval(&weights, &data.resolve(&cfg)?),
        Command::Compare {
            scale,
            out,
            data,
            train,
        } => cmd_compare(&CompareParams {
            scale: scale.into(),
            out,
            data: data.resolve(&cfg)?,
            cfg: train.resolve(&cfg)?,
        }),
        Command::Simulate {
            out,
            truth_out,
            count,
            n_reps,
            schedule_seed,
            seed,
            snr,
            no_noise,
        } => {
            let snr = cfg.pick(snr, "snr", 40.0)?;
            cmd_simulate(&SimulateParams {
                out: cfg.pick_required(out, "out")?,
                truth_out,
                count: cfg.pick(count, "count", 100)?,
                n_reps: cfg.pick(n_reps, "n-reps", 300)?,
                schedule_seed: cfg.pick(schedule_seed, "schedule-seed", 0)?,
                seed: cfg.pick(seed, "seed", 0)?,
                snr: if no_noise { None } else { Some(snr) },
            })
        }
        Command::Match {
            dict,
            input,
            out,
            schedule,
        } => cmd_match(&MatchParams {
            dict,
            input,
            out,
            schedule,
            workers,
        }),
        Command::Bench {
            out,
            sizes,
            n_reps,
            queries,
            reps,
            seed,
        } => {
            let sizes = cfg.pick(sizes, "sizes", "10000,20000,40000".into())?;
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::InvalidConfig(format!("--sizes entry {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            cmd_bench(&BenchParams {
                out: cfg.pick_required(out, "out")?,
                sizes,
                n_reps: cfg.pick(n_reps, "n-reps", 300)?,
                n_queries: cfg.pick(queries, "queries", 64)?,
                reps: cfg.pick(reps, "reps", 5)?,
                seed: cfg.pick(seed, "seed", 0)?,
                workers,
            })
        }
        Command::Maps {
            weights,
            dict,
            out_dir,
            data,
        } => cmd_maps(&MapsParams {
            weights,
            dict,
            out_dir: cfg.pick_required(out_dir, "out-dir")?,
            data: data.resolve(&cfg)?,
            workers,
        }),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format(_) => 1,
        Error::DigestMismatch(_) => 3,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
