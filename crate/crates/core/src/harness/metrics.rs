//! Per-epoch metrics, their CSV form, and the stability statistic.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::Variant;
use super::HarnessError;

pub const METRICS_HEADER: &str = "epoch,variant,train_error,test_error,wall_seconds";
pub const SUMMARY_HEADER: &str = "variant,final_test_error,param_count,word_bits";

/// Final-epochs window of the stability statistic.
pub const STABILITY_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// 1-based epoch number.
    pub epoch: usize,
    pub variant: Variant,
    pub train_error: f64,
    pub test_error: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub final_test_error: f64,
    pub param_count: usize,
    pub word_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
}

impl MetricsLog {
    /// Test errors of `variant` in epoch order.
    pub fn test_errors(&self, variant: Variant) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == variant).map(|r| r.test_error).collect()
    }

    pub fn final_test_error(&self, variant: Variant) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == variant).map(|s| s.final_test_error)
    }

    pub fn epochs(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = self.summary.iter().map(|s| s.variant).collect();
        v.extend(self.rows.iter().map(|r| r.variant));
        v.sort();
        v.dedup();
        v
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &log.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.variant, r.train_error, r.test_error, r.wall_seconds
        ));
    }
    out
}

pub fn emit_metrics_csv(log: &MetricsLog, path: &Path) -> Result<(), HarnessError> {
    write_text(path, &metrics_csv(log))
}

pub fn emit_summary_csv(log: &MetricsLog, path: &Path) -> Result<(), HarnessError> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in &log.summary {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.variant, s.final_test_error, s.param_count, s.word_bits
        ));
    }
    write_text(path, &out)
}

/// Parses rows written by [`emit_metrics_csv`].
pub fn parse_metrics_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let bad = |line: usize, msg: String| HarnessError::Csv {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        let n = i + 1;
        if n == 1 {
            if line != METRICS_HEADER {
                return Err(bad(n, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let [epoch, variant, train, test, wall] = f[..] else {
            return Err(bad(n, format!("expected 5 fields, found {}", f.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n, format!("{s:?}: {e}")));
        rows.push(MetricRow {
            epoch: epoch.parse().map_err(|e| bad(n, format!("{epoch:?}: {e}")))?,
            variant: variant.parse().map_err(|e| bad(n, e))?,
            train_error: num(train)?,
            test_error: num(test)?,
            wall_seconds: num(wall)?,
        });
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    parse_metrics_csv(File::open(path).map_err(io_err(path))?, path)
}

/// Test-error curves, one column per variant: `epoch,<variant>...`.
pub fn emit_plot_data(log: &MetricsLog, path: &Path) -> Result<(), HarnessError> {
    let variants: Vec<Variant> = log.variants();
    let mut out = String::from("epoch");
    for v in &variants {
        out.push(',');
        out.push_str(v.name());
    }
    out.push('\n');
    for epoch in 1..=log.epochs() {
        out.push_str(&epoch.to_string());
        for v in &variants {
            out.push(',');
            if let Some(r) = log.rows.iter().find(|r| r.epoch == epoch && r.variant == *v) {
                out.push_str(&r.test_error.to_string());
            }
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Sample standard deviation of `variant`'s test error over the last
/// `window` epochs.
pub fn stability(log: &MetricsLog, variant: Variant, window: usize) -> Result<f64, HarnessError> {
    let errors = log.test_errors(variant);
    if window < 2 || errors.len() < window {
        return Err(HarnessError::InsufficientEpochs {
            variant,
            available: errors.len(),
            window,
        });
    }
    let tail = &errors[errors.len() - window..];
    // deviations are taken around the first value so a flat series is exactly 0
    let shifted: Vec<f64> = tail.iter().map(|e| e - tail[0]).collect();
    let mean = shifted.iter().sum::<f64>() / window as f64;
    let var = shifted.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (window - 1) as f64;
    Ok(var.sqrt())
}
