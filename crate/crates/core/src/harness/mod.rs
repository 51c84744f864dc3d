//! Experiment orchestration: configuration, training runs over the raw,
//! Laplacian and Gaussian variants, per-epoch fusion metrics, sweeps, and
//! CSV outputs.

mod config;
mod experiment;
mod metrics;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ConfigConflict, ConfigError, DatasetKind, ExperimentConfig, Variant, CIFAR_SUBSET};
pub use experiment::{
    expected_files, load_splits, lr_config, lr_sweep, lr_sweep_prepared, param_ratio, param_report, precision_sweep,
    precision_sweep_prepared, run_experiment, run_prepared, variant_input_shape, variant_seed,
    write_precision_outputs, write_run_outputs, Bands, LrSweep, ParamEntry, ParamReport, PrecisionCell,
    PrecisionSweep, PreparedData, RunOutcome, Splits,
};
pub use metrics::{
    emit_metrics_csv, emit_plot_data, emit_summary_csv, metrics_csv, parse_metrics_csv, read_metrics_csv, stability,
    MetricRow, MetricsLog, SummaryRow, METRICS_HEADER, STABILITY_WINDOW, SUMMARY_HEADER,
};

use crate::cnn::CnnError;
use crate::data::DataError;
use crate::fusion::FusionError;
use crate::qnum::QuantError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration conflict: {0}")]
    ConfigConflict(#[from] ConfigConflict),
    #[error("missing dataset: {0}")]
    MissingDataset(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{variant} has {available} logged epochs, the window needs {window} (and at least 2)")]
    InsufficientEpochs {
        variant: Variant,
        available: usize,
        window: usize,
    },
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Csv { path: PathBuf, line: usize, msg: String },
}

impl HarnessError {
    /// Process exit status: 1 for configuration problems, 2 for missing or
    /// unreadable data.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::MissingDataset(_) | HarnessError::Data(_) | HarnessError::Csv { .. } => 2,
            HarnessError::Io { .. } => 2,
            _ => 1,
        }
    }
}
