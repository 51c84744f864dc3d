//! Central finite-difference verification of backpropagated gradients.
//!
//! ReLU and max pooling make the loss piecewise smooth. When a `±h` probe
//! flips a ReLU gate or changes a pooling winner, the difference quotient
//! straddles a kink and says nothing about the derivative at the base point.
//! Such probes are re-evaluated with the gates and winners of the base point
//! held fixed, which differentiates the smooth piece the analytic gradient
//! belongs to; the report counts them separately.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Shape;
use super::network::{build_lenet, cross_entropy, Network, NUM_CLASSES};
use super::CnnError;

/// Probe step for central differences.
pub const FD_STEP: f64 = 1e-3;

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-10;

/// `|a - n| / max(|a|, |n|)`, with the denominator floored at [`REL_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst disagreement within one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub layer: usize,
    pub name: &'static str,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes that crossed a ReLU/pooling boundary and were re-run with the
    /// activation pattern held fixed.
    pub locked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` with central differences of `f` around `x0`.
/// Returns the per-coordinate relative and absolute errors.
pub fn compare_with_central_differences(
    x0: &[f64],
    analytic: &[f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<(f64, f64)> {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    (0..x.len())
        .map(|i| {
            x[i] = x0[i] + step;
            let up = f(&x);
            x[i] = x0[i] - step;
            let down = f(&x);
            x[i] = x0[i];
            let numeric = (up - down) / (2.0 * step);
            (relative_error(analytic[i], numeric), (analytic[i] - numeric).abs())
        })
        .collect()
}

fn param<'a>(net: &'a mut Network<f64>, layer: usize, name: &str, i: usize) -> &'a mut f64 {
    let p = net.layers_mut()[layer].params.as_mut().expect("parameterized layer");
    let t = if name == "weight" { &mut p.weight } else { &mut p.bias };
    &mut t.data_mut()[i]
}

/// Checks every weight and bias of `network` on one batch.
pub fn gradient_check(
    network: &Network<f64>,
    input: &[f64],
    labels: &[u8],
    tolerance: f64,
) -> Result<GradCheckReport, CnnError> {
    let batch = labels.len();
    let base = network.forward(input, batch)?;
    let grads = network.backward(&base, labels)?;
    let mut probe = network.clone();
    let mut tensors = Vec::new();
    let mut locked = 0usize;
    let mut checked = 0usize;

    let loss_at = |probe: &Network<f64>, locked: &mut bool| -> Result<f64, CnnError> {
        let cache = probe.forward(input, batch)?;
        if cache.same_pattern(&base, network) {
            Ok(cross_entropy(&cache, labels))
        } else {
            *locked = true;
            Ok(cross_entropy(&probe.forward_locked(input, batch, Some(&base))?, labels))
        }
    };

    for layer in 0..network.layers().len() {
        let Some(analytic) = grads.layers[layer].as_ref() else {
            continue;
        };
        for (name, analytic) in [("weight", &analytic.weight), ("bias", &analytic.bias)] {
            let mut max_rel: f64 = 0.0;
            let mut max_abs: f64 = 0.0;
            for i in 0..analytic.len() {
                let original = *param(&mut probe, layer, name, i);
                let mut crossed = false;
                *param(&mut probe, layer, name, i) = original + FD_STEP;
                let mut up = loss_at(&probe, &mut crossed)?;
                *param(&mut probe, layer, name, i) = original - FD_STEP;
                let mut down = loss_at(&probe, &mut crossed)?;
                if crossed {
                    // both sides on the base pattern
                    locked += 1;
                    *param(&mut probe, layer, name, i) = original + FD_STEP;
                    up = cross_entropy(&probe.forward_locked(input, batch, Some(&base))?, labels);
                    *param(&mut probe, layer, name, i) = original - FD_STEP;
                    down = cross_entropy(&probe.forward_locked(input, batch, Some(&base))?, labels);
                }
                *param(&mut probe, layer, name, i) = original;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic.data()[i];
                max_rel = max_rel.max(relative_error(a, numeric));
                max_abs = max_abs.max((a - numeric).abs());
                checked += 1;
            }
            tensors.push(TensorCheck {
                layer,
                name,
                len: analytic.len(),
                max_rel_error: max_rel,
                max_abs_error: max_abs,
            });
        }
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        checked,
        locked,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Gradient check of a freshly initialized LeNet with small random biases
/// on a random batch of `batch` inputs in `[0, 1)`, all drawn from `seed`.
pub fn check_random_lenet(
    seed: u64,
    input: Shape,
    conv_channels: (usize, usize),
    hidden_units: usize,
    batch: usize,
    tolerance: f64,
) -> Result<GradCheckReport, CnnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = build_lenet::<f64, _>(input, conv_channels, hidden_units, &mut rng)?;
    // nonzero biases so every bias path is exercised
    for t in net.tensors_mut() {
        if t.dims().len() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let x: Vec<f64> = (0..batch * input.len()).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<u8> = (0..batch).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
    gradient_check(&net, &x, &labels, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::LayerSpec;

    fn tiny(seed: u64, input: Shape) -> (Network<f64>, Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = build_lenet::<f64, _>(input, (2, 3), 5, &mut rng).unwrap();
        for t in net.tensors_mut() {
            if t.dims().len() == 1 {
                t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
            }
        }
        let batch = 3;
        let x = (0..batch * input.len()).map(|_| rng.gen::<f64>()).collect();
        let labels = (0..batch).map(|_| rng.gen_range(0..10u8)).collect();
        (net, x, labels)
    }

    #[test]
    fn tiny_lenet_passes() {
        let shape = Shape::new(1, 13, 13);
        let params = build_lenet::<f64, _>(shape, (2, 3), 5, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .param_count();
        for seed in 0..4 {
            let report = check_random_lenet(seed, shape, (2, 3), 5, 3, 1e-4).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
            assert_eq!(report.checked, params);
        }
    }

    #[test]
    fn pooling_over_larger_maps_passes() {
        let report = check_random_lenet(5, Shape::new(2, 16, 16), (2, 3), 5, 3, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn zero_tolerance_fails() {
        let (net, x, labels) = tiny(6, Shape::new(1, 13, 13));
        assert!(!gradient_check(&net, &x, &labels, 0.0).unwrap().passed);
    }

    #[test]
    fn zero_input_zeroes_first_conv_kernel_gradient() {
        let (net, _, labels) = tiny(7, Shape::new(1, 13, 13));
        let x = vec![0.0; labels.len() * 169];
        let report = gradient_check(&net, &x, &labels, 1e-4).unwrap();
        assert!(report.passed);
        let cache = net.forward(&x, labels.len()).unwrap();
        let grads = net.backward(&cache, &labels).unwrap();
        let conv1 = grads.layers[0].as_ref().unwrap();
        assert!(conv1.weight.data().iter().all(|&g| g == 0.0));
        assert!(conv1.bias.data().iter().any(|&g| g != 0.0));
        let last = grads.layers[8].as_ref().unwrap();
        assert!(last.bias.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn linear_function_is_exact() {
        let coeffs = [0.5, -2.0, 3.25, 1e-3, 7.0];
        let x0 = [1.0, 2.0, -0.5, 0.25, -3.0];
        let errors = compare_with_central_differences(&x0, &coeffs, FD_STEP, |x| {
            x.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        });
        assert!(errors.iter().all(|(rel, _)| *rel < 1e-8), "{errors:?}");
    }

    #[test]
    fn softmax_regression_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::<f64>::new(
            Shape::new(6, 1, 1),
            &[LayerSpec::Dense { units: 10 }, LayerSpec::Softmax { classes: 10 }],
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradient_check(&net, &x, &[2, 8], 1e-4).unwrap();
        assert!(report.passed && report.locked == 0, "{report:?}");
    }

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-12) - 1e-2).abs() < 1e-15);
    }
}
