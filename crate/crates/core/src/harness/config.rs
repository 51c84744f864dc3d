//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! dataset = mnist
//! variants = original, gblur, laplace, fusion
//! word_bits = 8
//! rounding_schedule = every
//! conv_channels = 20, 50
//! ```
//!
//! Keys are the [`ExperimentConfig`] field names. Keys that are not given
//! take the defaults of the chosen dataset, wherever `dataset` appears.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::cnn::{Shape, TrainConfig};
use crate::qnum::{RoundingSchedule, SUPPORTED_WORD_LENGTHS};

/// Training samples used for CIFAR-10 unless a full run is requested.
pub const CIFAR_SUBSET: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn image_shape(&self) -> Shape {
        match self {
            DatasetKind::Mnist => Shape::new(1, 28, 28),
            DatasetKind::Cifar10 => Shape::new(3, 32, 32),
        }
    }

    pub fn default_epochs(&self) -> usize {
        match self {
            DatasetKind::Mnist => 30,
            DatasetKind::Cifar10 => 50,
        }
    }

    pub fn default_train_limit(&self) -> Option<usize> {
        match self {
            DatasetKind::Mnist => None,
            DatasetKind::Cifar10 => Some(CIFAR_SUBSET),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" | "cifar" => Ok(DatasetKind::Cifar10),
            other => Err(format!("unknown dataset {other:?} (expected mnist or cifar10)")),
        }
    }
}

/// A trained network (or, for `Fusion`, the fused pair) whose errors are logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Raw images.
    Original,
    /// Half-resolution Gaussian band.
    Gblur,
    /// Full-resolution Laplacian band.
    Laplace,
    /// Averaged softmax of the laplace and gblur networks.
    Fusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Original, Variant::Gblur, Variant::Laplace, Variant::Fusion];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Gblur => "gblur",
            Variant::Laplace => "laplace",
            Variant::Fusion => "fusion",
        }
    }

    /// Whether the variant owns a network (fusion is derived).
    pub fn is_trained(&self) -> bool {
        !matches!(self, Variant::Fusion)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(Variant::Original),
            "gblur" => Ok(Variant::Gblur),
            "laplace" => Ok(Variant::Laplace),
            "fusion" => Ok(Variant::Fusion),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Kept in canonical order (original, gblur, laplace, fusion).
    pub variants: Vec<Variant>,
    pub word_bits: u32,
    pub rounding_schedule: RoundingSchedule,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub conv_channels: (usize, usize),
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Directory holding the dataset files.
    pub data_dir: PathBuf,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test samples.
    pub test_limit: Option<usize>,
    /// Write measured wall-clock seconds; when off the column is all zeros,
    /// which makes metrics files byte-comparable across runs.
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            variants: Variant::ALL.to_vec(),
            word_bits: 32,
            rounding_schedule: RoundingSchedule::None,
            learning_rate: 0.1,
            epochs: dataset.default_epochs(),
            batch_size: 64,
            hidden_units: 500,
            conv_channels: (20, 50),
            seed: 0,
            output_dir: PathBuf::from("out"),
            data_dir: PathBuf::from("data"),
            train_limit: dataset.default_train_limit(),
            test_limit: None,
            record_wall_time: true,
        }
    }

    /// Parses the `key = value` format on top of the dataset defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides(text, &[])
    }

    /// Like [`parse`](Self::parse), with `overrides` replacing (or adding)
    /// assignments before defaults are resolved.
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.push((line, key, value.trim().to_string()));
        }
        for (key, value) in overrides {
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                });
            }
            match entries.iter_mut().find(|(_, k, _)| k == key) {
                Some(entry) => entry.2 = value.trim().to_string(),
                None => entries.push((0, key.to_string(), value.trim().to_string())),
            }
        }
        let dataset = match entries.iter().find(|(_, k, _)| k == "dataset") {
            Some((_, _, v)) => v.parse().map_err(|reason| invalid("dataset", v, reason))?,
            None => DatasetKind::Mnist,
        };
        let mut config = Self::for_dataset(dataset);
        for (_, key, value) in &entries {
            config.set(key, value)?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form. Changing `dataset` does not
    /// reset the other fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = value.parse().map_err(|r| invalid(key, value, r))?,
            "variants" => {
                let mut variants = value
                    .split(',')
                    .map(|v| v.parse::<Variant>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|r| invalid(key, value, r))?;
                variants.sort();
                variants.dedup();
                self.variants = variants;
            }
            "word_bits" => {
                let bits: u32 = number(key, value)?;
                if !SUPPORTED_WORD_LENGTHS.contains(&bits) {
                    return Err(invalid(key, value, "expected 4, 8, 16 or 32".into()));
                }
                self.word_bits = bits;
            }
            "rounding_schedule" => {
                self.rounding_schedule = value.parse().map_err(|e: crate::qnum::QuantError| invalid(key, value, e.to_string()))?
            }
            "learning_rate" => self.learning_rate = number(key, value)?,
            "epochs" => self.epochs = number(key, value)?,
            "batch_size" => self.batch_size = number(key, value)?,
            "hidden_units" => self.hidden_units = number(key, value)?,
            "conv_channels" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let [a, b] = parts[..] else {
                    return Err(invalid(key, value, "expected two comma-separated counts".into()));
                };
                self.conv_channels = (number(key, a)?, number(key, b)?);
            }
            "seed" => self.seed = number(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_limit" => self.train_limit = limit(key, value)?,
            "test_limit" => self.test_limit = limit(key, value)?,
            "record_wall_time" => self.record_wall_time = number(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Checks value ranges and that fusion has both band networks.
    pub fn validate(&self) -> Result<(), ConfigConflict> {
        let conflict = |m: String| Err(ConfigConflict(m));
        if self.variants.is_empty() {
            return conflict("no variants selected".into());
        }
        if self.variants.contains(&Variant::Fusion)
            && !(self.variants.contains(&Variant::Laplace) && self.variants.contains(&Variant::Gblur))
        {
            return conflict("fusion needs both laplace and gblur in the same run".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return conflict(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.hidden_units == 0 || self.conv_channels.0 == 0 || self.conv_channels.1 == 0 {
            return conflict("batch_size, hidden_units and conv_channels must be at least 1".into());
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return conflict("sample limits must be at least 1".into());
        }
        Ok(())
    }

    /// Networks that must be trained for the requested variants.
    pub fn trained_variants(&self) -> Vec<Variant> {
        self.variants.iter().copied().filter(Variant::is_trained).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            hidden_units: self.hidden_units,
            seed: self.seed,
            word_bits: self.word_bits,
            schedule: self.rounding_schedule,
        }
    }

    /// The config in its file format; `parse` of the result is the identity.
    pub fn to_config_string(&self) -> String {
        let limit = |l: Option<usize>| l.map_or("none".to_string(), |n| n.to_string());
        let variants: Vec<&str> = self.variants.iter().map(Variant::name).collect();
        format!(
            "dataset = {}\nvariants = {}\nword_bits = {}\nrounding_schedule = {}\nlearning_rate = {}\n\
             epochs = {}\nbatch_size = {}\nhidden_units = {}\nconv_channels = {}, {}\nseed = {}\n\
             output_dir = {}\ndata_dir = {}\ntrain_limit = {}\ntest_limit = {}\nrecord_wall_time = {}\n",
            self.dataset,
            variants.join(", "),
            self.word_bits,
            self.rounding_schedule,
            self.learning_rate,
            self.epochs,
            self.batch_size,
            self.hidden_units,
            self.conv_channels.0,
            self.conv_channels.1,
            self.seed,
            self.output_dir.display(),
            self.data_dir.display(),
            limit(self.train_limit),
            limit(self.test_limit),
            self.record_wall_time,
        )
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_dataset(DatasetKind::Mnist)
    }
}

/// A configuration that is well-formed but cannot be run.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ConfigConflict(pub String);

const KEYS: [&str; 15] = [
    "dataset",
    "variants",
    "word_bits",
    "rounding_schedule",
    "learning_rate",
    "epochs",
    "batch_size",
    "hidden_units",
    "conv_channels",
    "seed",
    "output_dir",
    "data_dir",
    "train_limit",
    "test_limit",
    "record_wall_time",
];

fn invalid(key: &str, value: &str, reason: String) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason,
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e.to_string()))
}

fn limit(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "none" | "all" | "full" => Ok(None),
        _ => number(key, value).map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_dataset() {
        let m = ExperimentConfig::parse("").unwrap();
        assert_eq!(m, ExperimentConfig::default());
        assert_eq!((m.epochs, m.train_limit, m.learning_rate, m.batch_size), (30, None, 0.1, 64));
        // dataset given after other keys still picks its own defaults
        let c = ExperimentConfig::parse("seed = 9\ndataset = cifar10\n").unwrap();
        assert_eq!((c.epochs, c.train_limit, c.seed), (50, Some(CIFAR_SUBSET), 9));
    }

    #[test]
    fn parses_every_key() {
        let text = "\
# a comment
dataset = cifar10   # trailing comment
variants = fusion, laplace,gblur
word_bits = 8
rounding_schedule = every
learning_rate = 0.01
epochs = 3
batch_size = 32
hidden_units = 1000
conv_channels = 6, 16
seed = 42
output_dir = runs/a
data_dir = /data
train_limit = all
test_limit = 500
record_wall_time = false
";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.dataset, DatasetKind::Cifar10);
        assert_eq!(c.variants, vec![Variant::Gblur, Variant::Laplace, Variant::Fusion]);
        assert_eq!(c.word_bits, 8);
        assert_eq!(c.rounding_schedule, RoundingSchedule::AfterEveryEpoch);
        assert_eq!((c.learning_rate, c.epochs, c.batch_size, c.hidden_units), (0.01, 3, 32, 1000));
        assert_eq!((c.conv_channels, c.seed), ((6, 16), 42));
        assert_eq!(c.output_dir, PathBuf::from("runs/a"));
        assert_eq!(c.data_dir, PathBuf::from("/data"));
        assert_eq!((c.train_limit, c.test_limit, c.record_wall_time), (None, Some(500), false));
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::parse("epochs 3"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("\nlearning_rat = 1"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\nseed = 2"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        for bad in ["word_bits = 12", "epochs = -1", "conv_channels = 20", "variants = fusion, edges", "dataset = imagenet"] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(ConfigError::InvalidValue { .. })), "{bad}");
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let set = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = ExperimentConfig::parse_with_overrides("epochs = 3\nseed = 1", &[set("seed", "5"), set("dataset", "cifar10")])
            .unwrap();
        assert_eq!((c.epochs, c.seed, c.dataset, c.train_limit), (3, 5, DatasetKind::Cifar10, Some(CIFAR_SUBSET)));
        assert!(ExperimentConfig::parse_with_overrides("", &[set("bogus", "1")]).is_err());
    }

    #[test]
    fn fusion_requires_both_bands() {
        let c = ExperimentConfig::parse("variants = original, fusion, laplace").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::parse("variants = gblur, fusion, laplace").unwrap();
        c.validate().unwrap();
        assert_eq!(c.trained_variants(), vec![Variant::Gblur, Variant::Laplace]);
        let c = ExperimentConfig::parse("learning_rate = 0").unwrap();
        assert!(c.validate().is_err());
    }
}
