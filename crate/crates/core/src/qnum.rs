//! Fixed-point formats and stochastic rounding of stored weights.
//!
//! A tensor's format is derived from its largest magnitude: enough integer
//! bits (sign included) to cover it, the rest of the word for the fraction.
//! Rounding picks the grid neighbour above with probability equal to the
//! fractional residue, so the rounding error has zero mean, and saturates at
//! the ends of the representable range. Word length 32 means "not quantized".

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::cnn::{Network, Real};

pub const SUPPORTED_WORD_LENGTHS: [u32; 4] = [4, 8, 16, 32];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("cannot derive a format from an empty tensor")]
    EmptyTensor,
    #[error("unsupported word length {0} (expected 4, 8, 16 or 32)")]
    UnsupportedWordLength(u32),
    #[error("unknown rounding schedule {0:?} (expected none, final or every)")]
    UnknownSchedule(String),
}

/// Signed fixed-point grid with `word_length` bits, `frac_length` of them
/// after the binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointFormat {
    word_length: u32,
    frac_length: i32,
}

impl FixedPointFormat {
    pub fn new(word_length: u32, frac_length: i32) -> Result<Self, QuantError> {
        if !SUPPORTED_WORD_LENGTHS.contains(&word_length) {
            return Err(QuantError::UnsupportedWordLength(word_length));
        }
        Ok(Self {
            word_length,
            frac_length,
        })
    }

    /// Format whose integer part covers `max_abs`:
    /// `integer_length = ceil(log2(max_abs)) + 1`, or 1 when `max_abs == 0`.
    pub fn covering(max_abs: f64, word_length: u32) -> Result<Self, QuantError> {
        let integer_length = if max_abs > 0.0 && max_abs.is_finite() {
            ceil_log2(max_abs) + 1
        } else {
            1
        };
        Self::new(word_length, word_length as i32 - integer_length)
    }

    pub fn word_length(&self) -> u32 {
        self.word_length
    }

    pub fn frac_length(&self) -> i32 {
        self.frac_length
    }

    pub fn integer_length(&self) -> i32 {
        self.word_length as i32 - self.frac_length
    }

    /// Grid spacing `2^-frac_length`.
    pub fn step(&self) -> f64 {
        2f64.powi(-self.frac_length)
    }

    pub fn max_value(&self) -> f64 {
        (2f64.powi(self.word_length as i32 - 1) - 1.0) * self.step()
    }

    pub fn min_value(&self) -> f64 {
        -(2f64.powi(self.word_length as i32 - 1)) * self.step()
    }
}

/// Smallest integer `e` with `2^e >= x`, for finite `x > 0`.
fn ceil_log2(x: f64) -> i32 {
    let mut e = x.log2().ceil() as i32;
    while 2f64.powi(e) < x {
        e += 1;
    }
    while 2f64.powi(e - 1) >= x {
        e -= 1;
    }
    e
}

pub fn derive_format<T: Real>(values: &[T], word_length: u32) -> Result<FixedPointFormat, QuantError> {
    if values.is_empty() {
        return Err(QuantError::EmptyTensor);
    }
    let max_abs = values.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    FixedPointFormat::covering(max_abs, word_length)
}

/// Rounds `x` down to the grid, then up by one step with probability equal
/// to the remaining fraction of a step; saturates to the format's range.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, format: &FixedPointFormat, rng: &mut R) -> f64 {
    let step = format.step();
    let lo = (x / step).floor() * step;
    let residue = (x - lo) / step;
    let rounded = if residue > 0.0 && rng.gen::<f64>() < residue {
        lo + step
    } else {
        lo
    };
    rounded.clamp(format.min_value(), format.max_value())
}

fn round_slice<T: Real, R: Rng + ?Sized>(values: &mut [T], format: &FixedPointFormat, rng: &mut R) {
    for v in values {
        *v = T::from_f64(stochastic_round(v.as_f64(), format, rng));
    }
}

/// Quantizes a copy of `values` on a format derived from the tensor itself.
/// Word length 32 returns the input untouched and draws no random numbers.
pub fn quantize_tensor<T: Real, R: Rng + ?Sized>(values: &[T], word_length: u32, rng: &mut R) -> Result<Vec<T>, QuantError> {
    let mut out = values.to_vec();
    quantize_in_place(&mut out, word_length, rng)?;
    Ok(out)
}

pub fn quantize_in_place<T: Real, R: Rng + ?Sized>(
    values: &mut [T],
    word_length: u32,
    rng: &mut R,
) -> Result<Option<FixedPointFormat>, QuantError> {
    let format = derive_format(values, word_length)?;
    if word_length == 32 {
        return Ok(None);
    }
    round_slice(values, &format, rng);
    Ok(Some(format))
}

/// Quantizes every conv/dense layer of `network`, weights and biases on one
/// format per layer. Returns the format used for each parameterized layer
/// (`None` everywhere at 32 bits).
pub fn quantize_network<T: Real, R: Rng + ?Sized>(
    network: &mut Network<T>,
    word_length: u32,
    rng: &mut R,
) -> Result<Vec<Option<FixedPointFormat>>, QuantError> {
    if !SUPPORTED_WORD_LENGTHS.contains(&word_length) {
        return Err(QuantError::UnsupportedWordLength(word_length));
    }
    let mut formats = Vec::new();
    for layer in network.layers_mut() {
        let Some(params) = layer.params.as_mut() else {
            continue;
        };
        if word_length == 32 {
            formats.push(None);
            continue;
        }
        let max_abs = params
            .weight
            .data()
            .iter()
            .chain(params.bias.data())
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max);
        let format = FixedPointFormat::covering(max_abs, word_length)?;
        round_slice(params.weight.data_mut(), &format, rng);
        round_slice(params.bias.data_mut(), &format, rng);
        formats.push(Some(format));
    }
    Ok(formats)
}

/// When stored weights are snapped to the fixed-point grid during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RoundingSchedule {
    #[default]
    None,
    AfterFinalEpoch,
    AfterEveryEpoch,
}

impl RoundingSchedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoundingSchedule::None => "none",
            RoundingSchedule::AfterFinalEpoch => "final",
            RoundingSchedule::AfterEveryEpoch => "every",
        }
    }

    /// Whether the schedule rounds after epoch `epoch_index` (0-based).
    pub fn applies(&self, epoch_index: usize, total_epochs: usize) -> bool {
        match self {
            RoundingSchedule::None => false,
            RoundingSchedule::AfterFinalEpoch => epoch_index + 1 == total_epochs,
            RoundingSchedule::AfterEveryEpoch => true,
        }
    }
}

impl fmt::Display for RoundingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoundingSchedule {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(RoundingSchedule::None),
            "final" | "after_final_epoch" | "afterfinalepoch" => Ok(RoundingSchedule::AfterFinalEpoch),
            "every" | "after_every_epoch" | "aftereveryepoch" => Ok(RoundingSchedule::AfterEveryEpoch),
            other => Err(QuantError::UnknownSchedule(other.to_string())),
        }
    }
}

/// Applies `schedule` at the end of epoch `epoch_index`; returns whether the
/// network was quantized.
pub fn apply_schedule<T: Real, R: Rng + ?Sized>(
    network: &mut Network<T>,
    schedule: RoundingSchedule,
    epoch_index: usize,
    total_epochs: usize,
    word_length: u32,
    rng: &mut R,
) -> Result<bool, QuantError> {
    if !schedule.applies(epoch_index, total_epochs) {
        return Ok(false);
    }
    quantize_network(network, word_length, rng)?;
    Ok(word_length != 32)
}
