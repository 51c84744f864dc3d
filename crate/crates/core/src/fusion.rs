//! Equal-weight fusion of two subband classifiers' softmax outputs.

use thiserror::Error;

use crate::cnn::NUM_CLASSES;

/// Slack allowed on input distributions (range and total mass).
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// A distribution over the ten classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityVector([f64; NUM_CLASSES]);

impl ProbabilityVector {
    /// Accepts `values` if each entry lies in `[0, 1]` and the entries sum
    /// to 1, both up to [`DISTRIBUTION_TOLERANCE`].
    pub fn new(values: &[f64]) -> Result<Self, FusionError> {
        let arr: [f64; NUM_CLASSES] = values.try_into().map_err(|_| {
            FusionError::InvalidDistribution(format!("expected {NUM_CLASSES} entries, got {}", values.len()))
        })?;
        let tol = DISTRIBUTION_TOLERANCE;
        if let Some((i, v)) = arr.iter().enumerate().find(|(_, v)| !(-tol..=1.0 + tol).contains(*v)) {
            return Err(FusionError::InvalidDistribution(format!("entry {i} = {v} outside [0, 1]")));
        }
        let sum: f64 = arr.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(FusionError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(arr))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, FusionError> {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        Self::new(&v)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn one_hot(class: usize) -> Self {
        assert!(class < NUM_CLASSES, "class {class} out of range");
        let mut v = [0.0; NUM_CLASSES];
        v[class] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Elementwise mean of two already-validated distributions.
pub fn average(s1: &ProbabilityVector, s2: &ProbabilityVector) -> ProbabilityVector {
    let mut out = [0.0; NUM_CLASSES];
    for (o, (a, b)) in out.iter_mut().zip(s1.0.iter().zip(&s2.0)) {
        *o = 0.5 * (a + b);
    }
    ProbabilityVector(out)
}

/// Validates both inputs and returns their elementwise mean.
pub fn fuse(s1: &[f64], s2: &[f64]) -> Result<ProbabilityVector, FusionError> {
    Ok(average(&ProbabilityVector::new(s1)?, &ProbabilityVector::new(s2)?))
}

pub fn predict_fused(s1: &[f64], s2: &[f64]) -> Result<usize, FusionError> {
    Ok(fuse(s1, s2)?.argmax())
}

/// Fused predictions for two row-major `n × 10` probability matrices, e.g.
/// the outputs of the L0 and G1 networks on the same samples.
pub fn fuse_batch(p1: &[f32], p2: &[f32]) -> Result<Vec<usize>, FusionError> {
    if p1.len() != p2.len() || !p1.len().is_multiple_of(NUM_CLASSES) {
        return Err(FusionError::InvalidDistribution(format!(
            "probability matrices of length {} and {} do not pair up",
            p1.len(),
            p2.len()
        )));
    }
    p1.chunks_exact(NUM_CLASSES)
        .zip(p2.chunks_exact(NUM_CLASSES))
        .map(|(a, b)| Ok(average(&ProbabilityVector::from_f32(a)?, &ProbabilityVector::from_f32(b)?).argmax()))
        .collect()
}

/// Fraction of fused predictions that disagree with `labels`.
pub fn fused_error_rate(p1: &[f32], p2: &[f32], labels: &[u8]) -> Result<f64, FusionError> {
    let predictions = fuse_batch(p1, p2)?;
    if predictions.len() != labels.len() {
        return Err(FusionError::InvalidDistribution(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, &l)| **p != l as usize).count();
    Ok(wrong as f64 / labels.len() as f64)
}
