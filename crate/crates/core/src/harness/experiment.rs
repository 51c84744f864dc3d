//! Training runs, precision and learning-rate sweeps, parameter accounting.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetKind, ExperimentConfig, Variant};
use super::metrics::{
    emit_metrics_csv, emit_plot_data, emit_summary_csv, stability, write_text, MetricRow, MetricsLog, SummaryRow,
    STABILITY_WINDOW,
};
use super::HarnessError;
use crate::cnn::{build_lenet, error_rate, predict_proba, save_checkpoint, train_epoch, Network, Shape};
use crate::data::{cifar_paths, decompose_dataset, load_cifar10, load_mnist, mnist_paths, Dataset};
use crate::fusion::fused_error_rate;
use crate::qnum::{apply_schedule, RoundingSchedule};
use crate::subband::{reduce, Image};

/// RNG stream ids within a variant's seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const QUANT_STREAM: u64 = 2;

/// Seed of a variant's random streams: the run seed XOR the 64-bit FNV-1a
/// hash of the variant name, so variants never share or perturb streams.
pub fn variant_seed(seed: u64, variant: Variant) -> u64 {
    let mut h = FnvHasher::default();
    h.write(variant.name().as_bytes());
    seed ^ h.finish()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Raw train and test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn limited(mut self, train_limit: Option<usize>, test_limit: Option<usize>) -> Self {
        if let Some(n) = train_limit {
            self.train = self.train.truncated(n);
        }
        if let Some(n) = test_limit {
            self.test = self.test.truncated(n);
        }
        self
    }
}

/// Human-readable list of the files a dataset needs.
pub fn expected_files(dataset: DatasetKind) -> String {
    match dataset {
        DatasetKind::Mnist => crate::data::MNIST_FILES
            .iter()
            .map(|(n, _)| format!("{n}[.gz]"))
            .collect::<Vec<_>>()
            .join(", "),
        DatasetKind::Cifar10 => {
            let mut names: Vec<&str> = crate::data::CIFAR_TRAIN_FILES.to_vec();
            names.push(crate::data::CIFAR_TEST_FILE);
            names.join(", ")
        }
    }
}

/// Loads the configured dataset from `config.data_dir` and applies the sample limits.
pub fn load_splits(config: &ExperimentConfig) -> Result<Splits, HarnessError> {
    let dir = &config.data_dir;
    let missing = || {
        HarnessError::MissingDataset(format!(
            "{} files not found under {} (expected {})",
            config.dataset,
            dir.display(),
            expected_files(config.dataset)
        ))
    };
    let splits = match config.dataset {
        DatasetKind::Mnist => {
            let [tri, trl, tei, tel] = mnist_paths(dir).ok_or_else(missing)?;
            let mut train = load_mnist(&tri, &trl)?;
            let mut test = load_mnist(&tei, &tel)?;
            train.name = "mnist-train".into();
            test.name = "mnist-test".into();
            Splits { train, test }
        }
        DatasetKind::Cifar10 => {
            let (train_paths, test_path) = cifar_paths(dir).ok_or_else(missing)?;
            let mut train = load_cifar10(&train_paths)?;
            let mut test = load_cifar10(&[test_path])?;
            train.name = "cifar10-train".into();
            test.name = "cifar10-test".into();
            Splits { train, test }
        }
    };
    Ok(splits.limited(config.train_limit, config.test_limit))
}

/// The datasets each trained variant consumes.
#[derive(Debug, Clone, Default)]
pub struct Bands {
    pub original: Option<Dataset>,
    pub laplace: Option<Dataset>,
    pub gblur: Option<Dataset>,
}

impl Bands {
    pub fn from_dataset(dataset: &Dataset, variants: &[Variant]) -> Result<Self, HarnessError> {
        let mut bands = Bands::default();
        if variants.contains(&Variant::Original) {
            bands.original = Some(dataset.clone());
        }
        let need_l0 = variants.contains(&Variant::Laplace);
        let need_g1 = variants.contains(&Variant::Gblur);
        if need_l0 || need_g1 {
            let (l0, g1) = decompose_dataset(dataset)?.into_bands();
            bands.laplace = need_l0.then_some(l0);
            bands.gblur = need_g1.then_some(g1);
        }
        Ok(bands)
    }

    pub fn get(&self, variant: Variant) -> Option<&Dataset> {
        match variant {
            Variant::Original => self.original.as_ref(),
            Variant::Laplace => self.laplace.as_ref(),
            Variant::Gblur => self.gblur.as_ref(),
            Variant::Fusion => None,
        }
    }
}

/// Band datasets for both splits, computed once and shared across runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Bands,
    pub test: Bands,
    pub train_labels: Vec<u8>,
    pub test_labels: Vec<u8>,
}

impl PreparedData {
    pub fn new(splits: &Splits, variants: &[Variant]) -> Result<Self, HarnessError> {
        let trained: Vec<Variant> = variants.iter().copied().filter(Variant::is_trained).collect();
        Ok(Self {
            train: Bands::from_dataset(&splits.train, &trained)?,
            test: Bands::from_dataset(&splits.test, &trained)?,
            train_labels: splits.train.labels.clone(),
            test_labels: splits.test.labels.clone(),
        })
    }
}

/// Input shape of each trained variant's network for raw images of `shape`.
pub fn variant_input_shape(variant: Variant, shape: Shape) -> Option<Shape> {
    match variant {
        Variant::Original | Variant::Laplace => Some(shape),
        Variant::Gblur => {
            let half = reduce(&Image::zeros(shape.channels, shape.height, shape.width));
            Some(half.shape().into())
        }
        Variant::Fusion => None,
    }
}

/// Trained networks of a finished run, with its log.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: MetricsLog,
    pub networks: Vec<(Variant, Network<f32>)>,
}

struct Trainee<'a> {
    variant: Variant,
    network: Network<f32>,
    train: &'a Dataset,
    test: &'a Dataset,
    shuffle_rng: ChaCha8Rng,
    quant_rng: ChaCha8Rng,
}

fn rounded_seconds(start: Instant, record: bool) -> f64 {
    if record {
        (start.elapsed().as_secs_f64() * 1e3).round() / 1e3
    } else {
        0.0
    }
}

/// Trains the configured variants on prepared data, reporting each row as
/// it is produced.
pub fn run_prepared(
    config: &ExperimentConfig,
    data: &PreparedData,
    on_row: &mut dyn FnMut(&MetricRow),
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let train_config = config.train_config();
    let mut trainees = Vec::new();
    for variant in config.trained_variants() {
        let missing = || HarnessError::MissingDataset(format!("no {variant} band prepared"));
        let train = data.train.get(variant).ok_or_else(missing)?;
        let test = data.test.get(variant).ok_or_else(missing)?;
        let shape = train.shape().ok_or(HarnessError::MissingDataset(format!("{variant} training set is empty")))?;
        if test.is_empty() {
            return Err(HarnessError::MissingDataset(format!("{variant} test set is empty")));
        }
        let seed = variant_seed(config.seed, variant);
        let network = build_lenet(shape, config.conv_channels, config.hidden_units, &mut stream(seed, INIT_STREAM))?;
        trainees.push(Trainee {
            variant,
            network,
            train,
            test,
            shuffle_rng: stream(seed, SHUFFLE_STREAM),
            quant_rng: stream(seed, QUANT_STREAM),
        });
    }
    let fusion = config.variants.contains(&Variant::Fusion);
    let mut log = MetricsLog::default();
    let mut last_test: BTreeMap<Variant, (f64, Vec<f32>)> = BTreeMap::new();

    for epoch in 0..config.epochs {
        let mut train_probs: BTreeMap<Variant, Vec<f32>> = BTreeMap::new();
        let mut walls: BTreeMap<Variant, f64> = BTreeMap::new();
        let mut rows = Vec::new();
        for t in &mut trainees {
            let start = Instant::now();
            let report = train_epoch(&mut t.network, t.train, &train_config, &mut t.shuffle_rng)?;
            apply_schedule(
                &mut t.network,
                config.rounding_schedule,
                epoch,
                config.epochs,
                config.word_bits,
                &mut t.quant_rng,
            )?;
            let probs = predict_proba(&t.network, t.test)?;
            let test_error = error_rate(&probs, &t.test.labels);
            let wall = rounded_seconds(start, config.record_wall_time);
            rows.push(MetricRow {
                epoch: epoch + 1,
                variant: t.variant,
                train_error: report.train_error,
                test_error,
                wall_seconds: wall,
            });
            walls.insert(t.variant, wall);
            train_probs.insert(t.variant, report.probabilities);
            last_test.insert(t.variant, (test_error, probs));
        }
        if fusion {
            let start = Instant::now();
            let train_error = fused_error_rate(
                &train_probs[&Variant::Laplace],
                &train_probs[&Variant::Gblur],
                &data.train_labels,
            )?;
            let test_error = fused_error_rate(
                &last_test[&Variant::Laplace].1,
                &last_test[&Variant::Gblur].1,
                &data.test_labels,
            )?;
            let wall = if config.record_wall_time {
                let own = rounded_seconds(start, true);
                ((walls[&Variant::Laplace] + walls[&Variant::Gblur] + own) * 1e3).round() / 1e3
            } else {
                0.0
            };
            rows.push(MetricRow {
                epoch: epoch + 1,
                variant: Variant::Fusion,
                train_error,
                test_error,
                wall_seconds: wall,
            });
        }
        for row in rows {
            on_row(&row);
            log.rows.push(row);
        }
    }

    if config.epochs == 0 {
        for t in &trainees {
            let probs = predict_proba(&t.network, t.test)?;
            last_test.insert(t.variant, (error_rate(&probs, &t.test.labels), probs));
        }
    }
    for t in &trainees {
        log.summary.push(SummaryRow {
            variant: t.variant,
            final_test_error: last_test[&t.variant].0,
            param_count: t.network.param_count(),
            word_bits: config.word_bits,
        });
    }
    if fusion {
        let (l0, g1) = (&last_test[&Variant::Laplace].1, &last_test[&Variant::Gblur].1);
        let count = |v| trainees.iter().find(|t| t.variant == v).map_or(0, |t| t.network.param_count());
        log.summary.push(SummaryRow {
            variant: Variant::Fusion,
            final_test_error: fused_error_rate(l0, g1, &data.test_labels)?,
            param_count: count(Variant::Laplace) + count(Variant::Gblur),
            word_bits: config.word_bits,
        });
    }
    Ok(RunOutcome {
        log,
        networks: trainees.into_iter().map(|t| (t.variant, t.network)).collect(),
    })
}

/// Writes `metrics.csv`, `summary.csv`, `fig3.csv`, `config.txt` and one
/// `<variant>.lpnn` checkpoint per trained network into `dir`.
pub fn write_run_outputs(config: &ExperimentConfig, outcome: &RunOutcome, dir: &Path) -> Result<(), HarnessError> {
    emit_metrics_csv(&outcome.log, &dir.join("metrics.csv"))?;
    emit_summary_csv(&outcome.log, &dir.join("summary.csv"))?;
    emit_plot_data(&outcome.log, &dir.join("fig3.csv"))?;
    write_text(&dir.join("config.txt"), &config.to_config_string())?;
    for (variant, network) in &outcome.networks {
        let path = dir.join(format!("{variant}.lpnn"));
        let io = |source| HarnessError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        save_checkpoint(&mut w, network, config.word_bits)?;
    }
    Ok(())
}

/// Loads data, trains, and writes outputs to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig, on_row: &mut dyn FnMut(&MetricRow)) -> Result<MetricsLog, HarnessError> {
    config.validate()?;
    let splits = load_splits(config)?;
    let data = PreparedData::new(&splits, &config.variants)?;
    let outcome = run_prepared(config, &data, on_row)?;
    write_run_outputs(config, &outcome, &config.output_dir)?;
    Ok(outcome.log)
}

/// One (word length, schedule) cell of a precision sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCell {
    pub word_bits: u32,
    pub schedule: RoundingSchedule,
    pub log: MetricsLog,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecisionSweep {
    pub cells: Vec<PrecisionCell>,
}

impl PrecisionSweep {
    pub fn cell(&self, word_bits: u32, schedule: RoundingSchedule) -> Option<&PrecisionCell> {
        self.cells.iter().find(|c| c.word_bits == word_bits && c.schedule == schedule)
    }

    pub fn final_error(&self, variant: Variant, word_bits: u32, schedule: RoundingSchedule) -> Option<f64> {
        self.cell(word_bits, schedule)?.log.final_test_error(variant)
    }

    fn word_bits(&self) -> Vec<u32> {
        let mut bits: Vec<u32> = Vec::new();
        for c in &self.cells {
            if !bits.contains(&c.word_bits) {
                bits.push(c.word_bits);
            }
        }
        bits
    }

    /// Final test errors as `variant,<bits>...` rows for one schedule.
    pub fn table_csv(&self, schedule: RoundingSchedule) -> String {
        let bits = self.word_bits();
        let mut out = String::from("variant");
        for b in &bits {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        let variants: Vec<Variant> = Variant::ALL
            .into_iter()
            .filter(|v| self.cells.iter().any(|c| c.log.final_test_error(*v).is_some()))
            .collect();
        for v in variants {
            out.push_str(v.name());
            for b in &bits {
                out.push(',');
                if let Some(e) = self.final_error(v, *b, schedule) {
                    out.push_str(&e.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Test-error curves of every cell under `schedule`:
    /// `word_bits,epoch,variant,test_error`.
    pub fn curves_csv(&self, schedule: RoundingSchedule) -> String {
        let mut out = String::from("word_bits,epoch,variant,test_error\n");
        for c in self.cells.iter().filter(|c| c.schedule == schedule) {
            for r in &c.log.rows {
                out.push_str(&format!("{},{},{},{}\n", c.word_bits, r.epoch, r.variant, r.test_error));
            }
        }
        out
    }
}

fn cell_dir(base: &Path, word_bits: u32, schedule: RoundingSchedule) -> PathBuf {
    if word_bits == 32 {
        base.join("32bit")
    } else {
        base.join(format!("{word_bits}bit_{schedule}"))
    }
}

/// One run per (word length, schedule). A 32-bit run never quantizes, so it
/// is trained once and shared by every schedule. Each cell's outputs go to
/// `<output_dir>/<bits>bit_<schedule>/` (`32bit/` for the shared run).
pub fn precision_sweep_prepared(
    base: &ExperimentConfig,
    data: &PreparedData,
    word_bits_list: &[u32],
    schedules: &[RoundingSchedule],
    write_outputs: bool,
    on_cell: &mut dyn FnMut(u32, RoundingSchedule, &MetricRow),
) -> Result<PrecisionSweep, HarnessError> {
    let mut sweep = PrecisionSweep::default();
    let mut full_precision: Option<MetricsLog> = None;
    for &bits in word_bits_list {
        for &schedule in schedules {
            let log = if bits == 32 {
                if full_precision.is_none() {
                    let mut config = base.clone();
                    config.word_bits = 32;
                    config.rounding_schedule = RoundingSchedule::None;
                    let outcome = run_prepared(&config, data, &mut |r| on_cell(32, schedule, r))?;
                    if write_outputs {
                        write_run_outputs(&config, &outcome, &cell_dir(&base.output_dir, 32, schedule))?;
                    }
                    full_precision = Some(outcome.log);
                }
                full_precision.clone().expect("set above")
            } else {
                let mut config = base.clone();
                config.word_bits = bits;
                config.rounding_schedule = schedule;
                let outcome = run_prepared(&config, data, &mut |r| on_cell(bits, schedule, r))?;
                if write_outputs {
                    write_run_outputs(&config, &outcome, &cell_dir(&base.output_dir, bits, schedule))?;
                }
                outcome.log
            };
            sweep.cells.push(PrecisionCell {
                word_bits: bits,
                schedule,
                log,
            });
        }
    }
    Ok(sweep)
}

/// Loads data once, runs every cell, and writes `fig4_final.csv`,
/// `fig4_every.csv` and `fig9.csv` (per-epoch curves under per-epoch
/// rounding) next to the per-cell directories.
pub fn precision_sweep(
    base: &ExperimentConfig,
    word_bits_list: &[u32],
    schedules: &[RoundingSchedule],
    on_cell: &mut dyn FnMut(u32, RoundingSchedule, &MetricRow),
) -> Result<PrecisionSweep, HarnessError> {
    base.validate()?;
    let splits = load_splits(base)?;
    let data = PreparedData::new(&splits, &base.variants)?;
    let sweep = precision_sweep_prepared(base, &data, word_bits_list, schedules, true, on_cell)?;
    write_precision_outputs(&sweep, &base.output_dir)?;
    Ok(sweep)
}

pub fn write_precision_outputs(sweep: &PrecisionSweep, dir: &Path) -> Result<(), HarnessError> {
    for (schedule, name) in [
        (RoundingSchedule::AfterFinalEpoch, "fig4_final.csv"),
        (RoundingSchedule::AfterEveryEpoch, "fig4_every.csv"),
    ] {
        if sweep.cells.iter().any(|c| c.schedule == schedule) {
            write_text(&dir.join(name), &sweep.table_csv(schedule))?;
        }
    }
    if sweep.cells.iter().any(|c| c.schedule == RoundingSchedule::AfterEveryEpoch) {
        write_text(&dir.join("fig9.csv"), &sweep.curves_csv(RoundingSchedule::AfterEveryEpoch))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LrSweep {
    pub runs: Vec<(f64, MetricsLog)>,
}

impl LrSweep {
    /// `learning_rate,epoch,variant,test_error` for every run.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("learning_rate,epoch,variant,test_error\n");
        for (lr, log) in &self.runs {
            for r in &log.rows {
                out.push_str(&format!("{lr},{},{},{}\n", r.epoch, r.variant, r.test_error));
            }
        }
        out
    }

    /// `learning_rate,variant,window,stability` for every run with enough epochs.
    pub fn stability_csv(&self, window: usize) -> String {
        let mut out = String::from("learning_rate,variant,window,stability\n");
        for (lr, log) in &self.runs {
            for v in log.variants() {
                if let Ok(s) = stability(log, v, window) {
                    out.push_str(&format!("{lr},{v},{window},{s}\n"));
                }
            }
        }
        out
    }
}

/// The configuration of one learning-rate sweep run: the original and fused
/// networks are compared, so all four variants are trained.
pub fn lr_config(base: &ExperimentConfig, learning_rate: f64) -> ExperimentConfig {
    let mut config = base.clone();
    config.learning_rate = learning_rate;
    config.variants = Variant::ALL.to_vec();
    config.output_dir = base.output_dir.join(format!("lr_{learning_rate}"));
    config
}

pub fn lr_sweep_prepared(
    base: &ExperimentConfig,
    data: &PreparedData,
    rates: &[f64],
    write_outputs: bool,
    on_row: &mut dyn FnMut(f64, &MetricRow),
) -> Result<LrSweep, HarnessError> {
    let mut sweep = LrSweep::default();
    for &lr in rates {
        let config = lr_config(base, lr);
        let outcome = run_prepared(&config, data, &mut |r| on_row(lr, r))?;
        if write_outputs {
            write_run_outputs(&config, &outcome, &config.output_dir)?;
        }
        sweep.runs.push((lr, outcome.log));
    }
    Ok(sweep)
}

/// Loads data once, runs every rate, and writes `fig6.csv` and
/// `stability.csv` next to the per-rate directories.
pub fn lr_sweep(
    base: &ExperimentConfig,
    rates: &[f64],
    on_row: &mut dyn FnMut(f64, &MetricRow),
) -> Result<LrSweep, HarnessError> {
    let probe = lr_config(base, rates.first().copied().unwrap_or(base.learning_rate));
    probe.validate()?;
    for &lr in rates {
        lr_config(base, lr).validate()?;
    }
    let splits = load_splits(base)?;
    let data = PreparedData::new(&splits, &Variant::ALL)?;
    let sweep = lr_sweep_prepared(base, &data, rates, true, on_row)?;
    write_text(&base.output_dir.join("fig6.csv"), &sweep.curves_csv())?;
    write_text(&base.output_dir.join("stability.csv"), &sweep.stability_csv(STABILITY_WINDOW))?;
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub variant: Variant,
    /// Network input; `None` for fusion, which sums the laplace and gblur networks.
    pub input_shape: Option<Shape>,
    pub param_count: usize,
    pub storage_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub dataset: DatasetKind,
    pub conv_channels: (usize, usize),
    pub hidden_units: usize,
    pub word_bits: u32,
    pub entries: Vec<ParamEntry>,
}

impl ParamReport {
    pub fn entry(&self, variant: Variant) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,input_shape,param_count,word_bits,storage_bits\n");
        for e in &self.entries {
            let shape = e.input_shape.map_or("laplace+gblur".to_string(), |s| s.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.variant, shape, e.param_count, self.word_bits, e.storage_bits
            ));
        }
        out
    }
}

/// Ratios `self / other` of parameter count and storage bits for one variant.
pub fn param_ratio(a: &ParamReport, b: &ParamReport, variant: Variant) -> Option<(f64, f64)> {
    let (x, y) = (a.entry(variant)?, b.entry(variant)?);
    Some((
        x.param_count as f64 / y.param_count as f64,
        x.storage_bits as f64 / y.storage_bits as f64,
    ))
}

/// Parameter counts of every variant's network for the configured
/// dataset, channels and hidden width.
pub fn param_report(config: &ExperimentConfig) -> Result<ParamReport, HarnessError> {
    let shape = config.dataset.image_shape();
    let mut entries: Vec<ParamEntry> = Vec::new();
    let bits = u64::from(config.word_bits);
    for variant in [Variant::Original, Variant::Gblur, Variant::Laplace] {
        let input = variant_input_shape(variant, shape).expect("trained variant");
        let net: Network<f32> = build_lenet(input, config.conv_channels, config.hidden_units, &mut stream(0, 0))?;
        let count = net.param_count();
        entries.push(ParamEntry {
            variant,
            input_shape: Some(input),
            param_count: count,
            storage_bits: count as u64 * bits,
        });
    }
    let fused = entries[1].param_count + entries[2].param_count;
    entries.push(ParamEntry {
        variant: Variant::Fusion,
        input_shape: None,
        param_count: fused,
        storage_bits: fused as u64 * bits,
    });
    Ok(ParamReport {
        dataset: config.dataset,
        conv_channels: config.conv_channels,
        hidden_units: config.hidden_units,
        word_bits: config.word_bits,
        entries,
    })
}
