//! `sbnet`: train subband-fused LeNets, sweep word lengths and learning
//! rates, and inspect the decomposition, parameter counts and gradients.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sbnet_core::cnn::{check_random_lenet, Shape};
use sbnet_core::data::{decompose_dataset, Dataset, CIFAR_ARCHIVE_MD5, MNIST_FILES};
use sbnet_core::harness::{
    load_splits, lr_sweep, param_ratio, param_report, precision_sweep, run_experiment, stability, ConfigError,
    ExperimentConfig, HarnessError, MetricRow, ParamReport, Variant, STABILITY_WINDOW,
};
use sbnet_core::qnum::{RoundingSchedule, SUPPORTED_WORD_LENGTHS};
use sbnet_core::subband::write_sbnd;

fn data_help() -> String {
    let mut s = String::from(
        "Datasets are read from --data-dir (or `data_dir` in the config), never downloaded.\n\n\
         MNIST (IDX, optionally gzipped), in <data_dir> or <data_dir>/mnist:\n",
    );
    for (name, md5) in MNIST_FILES {
        s.push_str(&format!("  {name}[.gz]   md5 of .gz: {md5}\n"));
    }
    s.push_str(&format!(
        "\nCIFAR-10 binary version, in <data_dir> or <data_dir>/cifar-10-batches-bin:\n  \
         data_batch_1.bin .. data_batch_5.bin, test_batch.bin\n  \
         (from cifar-10-binary.tar.gz, md5 {CIFAR_ARCHIVE_MD5})\n\n\
         Exit status: 0 success, 1 configuration error, 2 data error, 3 failed check.\n"
    ));
    s
}

#[derive(Parser, Debug)]
#[command(name = "sbnet", version, about = "Subband decomposition + low-precision CNN experiments")]
#[command(after_help = data_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (results are identical for a fixed count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use every training sample (CIFAR-10 otherwise uses the first 10000).
    #[arg(long, global = true)]
    full: bool,
    /// Directory holding the dataset files.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Extra config assignment, e.g. `--set epochs=5` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Suppress per-epoch progress lines.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured variants and write metrics, plot data and checkpoints.
    Train,
    /// Sweep word lengths under both rounding schedules.
    SweepPrecision {
        #[arg(long, value_delimiter = ',', default_values_t = [32u32, 16, 8, 4])]
        bits: Vec<u32>,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [Sched::Final, Sched::Every])]
        schedules: Vec<Sched>,
    },
    /// Compare original and fusion across learning rates.
    SweepLr {
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001])]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        hidden_units: usize,
    },
    /// Write the L0/G1 bands of the dataset as SBND records.
    Decompose {
        #[arg(long, value_enum, default_value_t = Split::Both)]
        split: Split,
    },
    /// Report parameter counts and storage, optionally against a second configuration.
    Params {
        /// Hidden width of the comparison configuration.
        #[arg(long)]
        against_hidden_units: Option<usize>,
        /// Word length of the comparison configuration.
        #[arg(long)]
        against_word_bits: Option<u32>,
    },
    /// Finite-difference check of backpropagation on random tiny networks.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Side of the square single-channel input.
        #[arg(long, default_value_t = 13)]
        size: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Sched {
    Final,
    Every,
}

impl From<Sched> for RoundingSchedule {
    fn from(s: Sched) -> Self {
        match s {
            Sched::Final => RoundingSchedule::AfterFinalEpoch,
            Sched::Every => RoundingSchedule::AfterEveryEpoch,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Split {
    Train,
    Test,
    Both,
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig, HarnessError> {
    let text = match &g.config {
        Some(path) => std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let overrides = g
        .sets
        .iter()
        .map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ConfigError::Syntax { line: 0, text: a.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut config = ExperimentConfig::parse_with_overrides(&text, &overrides)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    if let Some(dir) = &g.data_dir {
        config.data_dir = dir.clone();
    }
    if g.full {
        config.train_limit = None;
        config.test_limit = None;
    }
    config.validate()?;
    Ok(config)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn progress(quiet: bool, prefix: &str, row: &MetricRow) {
    if !quiet {
        eprintln!(
            "{prefix}epoch {:>3} {:<8} train {:>7} test {:>7} {:>8.1}s",
            row.epoch,
            row.variant.name(),
            pct(row.train_error),
            pct(row.test_error),
            row.wall_seconds
        );
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_bands(dataset: &Dataset, dir: &Path) -> Result<usize, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let bands = decompose_dataset(dataset)?;
    for (name, pick) in [("l0.sbnd", 0), ("g1.sbnd", 1)] {
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(io_error(&path))?);
        for pair in &bands.pairs {
            write_sbnd(&mut w, if pick == 0 { &pair.l0 } else { &pair.g1 }).map_err(io_error(&path))?;
        }
        w.flush().map_err(io_error(&path))?;
    }
    let path = dir.join("labels.u8");
    std::fs::write(&path, &bands.labels).map_err(io_error(&path))?;
    Ok(bands.len())
}

fn print_params(report: &ParamReport) {
    println!(
        "{} conv {:?} hidden {} at {} bits",
        report.dataset, report.conv_channels, report.hidden_units, report.word_bits
    );
    print!("{}", report.to_csv());
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    let g = &cli.global;
    let mut config = resolve_config(g)?;
    let quiet = g.quiet;
    match cli.command {
        Command::Train => {
            let log = run_experiment(&config, &mut |r| progress(quiet, "", r))?;
            for s in &log.summary {
                println!(
                    "{:<8} final test error {:>7}  params {:>8}  {} bits",
                    s.variant.name(),
                    pct(s.final_test_error),
                    s.param_count,
                    s.word_bits
                );
            }
            println!("wrote {}", config.output_dir.join("metrics.csv").display());
        }
        Command::SweepPrecision { bits, schedules } => {
            if let Some(b) = bits.iter().find(|b| !SUPPORTED_WORD_LENGTHS.contains(b)) {
                return Err(ConfigError::InvalidValue {
                    key: "--bits".into(),
                    value: b.to_string(),
                    reason: "expected 4, 8, 16 or 32".into(),
                }
                .into());
            }
            let schedules: Vec<RoundingSchedule> = schedules.into_iter().map(Into::into).collect();
            let sweep = precision_sweep(&config, &bits, &schedules, &mut |b, s, r| {
                progress(quiet, &format!("[{b}bit {s}] "), r)
            })?;
            for s in &schedules {
                println!("final test error, rounding {s}:");
                print!("{}", sweep.table_csv(*s));
            }
            println!("wrote {}", config.output_dir.display());
        }
        Command::SweepLr { rates, hidden_units } => {
            config.hidden_units = hidden_units;
            let sweep = lr_sweep(&config, &rates, &mut |lr, r| progress(quiet, &format!("[lr {lr}] "), r))?;
            for (lr, log) in &sweep.runs {
                for v in [Variant::Original, Variant::Fusion] {
                    let final_error = log.final_test_error(v).map(pct).unwrap_or_default();
                    match stability(log, v, STABILITY_WINDOW) {
                        Ok(s) => println!("lr {lr:<6} {:<8} final {final_error:>7} stability {s:.5}", v.name()),
                        Err(_) => println!("lr {lr:<6} {:<8} final {final_error:>7} stability n/a", v.name()),
                    }
                }
            }
            println!("wrote {}", config.output_dir.join("fig6.csv").display());
        }
        Command::Decompose { split } => {
            let splits = load_splits(&config)?;
            let mut jobs = Vec::new();
            if split != Split::Test {
                jobs.push(("train", &splits.train));
            }
            if split != Split::Train {
                jobs.push(("test", &splits.test));
            }
            for (name, dataset) in jobs {
                let dir = config.output_dir.join(name);
                let n = write_bands(dataset, &dir)?;
                println!("{name}: {n} samples -> {}", dir.display());
            }
        }
        Command::Params {
            against_hidden_units,
            against_word_bits,
        } => {
            let report = param_report(&config)?;
            print_params(&report);
            if against_hidden_units.is_some() || against_word_bits.is_some() {
                let mut other = config.clone();
                if let Some(h) = against_hidden_units {
                    other.hidden_units = h;
                }
                if let Some(b) = against_word_bits {
                    other.set("word_bits", &b.to_string())?;
                }
                let other_report = param_report(&other)?;
                println!();
                print_params(&other_report);
                println!();
                for v in Variant::ALL {
                    if let Some((params, bits)) = param_ratio(&report, &other_report, v) {
                        println!("{:<8} params ratio {params:.4}  storage ratio {bits:.4}", v.name());
                    }
                }
            }
        }
        Command::Gradcheck {
            seeds,
            tolerance,
            size,
        } => {
            let mut all_passed = true;
            for seed in 0..seeds {
                let report = check_random_lenet(
                    config.seed.wrapping_add(seed),
                    Shape::new(1, size, size),
                    (2, 3),
                    5,
                    3,
                    tolerance,
                )?;
                println!(
                    "seed {:>3}: {} max relative error {:.3e} over {} parameters ({} kink-locked)",
                    config.seed.wrapping_add(seed),
                    if report.passed { "PASS" } else { "FAIL" },
                    report.max_rel_error,
                    report.checked,
                    report.locked
                );
                all_passed &= report.passed;
            }
            if !all_passed {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
