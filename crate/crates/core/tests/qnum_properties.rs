use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbnet_core::qnum::{derive_format, quantize_tensor, stochastic_round, FixedPointFormat};

fn on_grid(v: f64, f: &FixedPointFormat) -> bool {
    let k = v / f.step();
    k == k.round() && (f.min_value()..=f.max_value()).contains(&v)
}

/// Mean of `draws` roundings of `x`, checked against the analytic
/// two-point distribution.
fn unbiased_within_three_se(x: f64, word_length: u32, draws: usize, seed: u64) -> (bool, f64, f64) {
    let format = derive_format(&[x], word_length).unwrap();
    let step = format.step();
    let lo = (x / step).floor() * step;
    let p = (x - lo) / step;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let q = stochastic_round(x, &format, &mut rng);
        assert!(q == lo || q == lo + step, "{q} is not a neighbour of {x}");
        assert!(on_grid(q, &format));
        total += q;
    }
    let mean = total / draws as f64;
    let se = step * (p * (1.0 - p) / draws as f64).sqrt();
    ((mean - x).abs() <= 3.0 * se, mean, se)
}

#[test]
fn unbiased_at_eight_bits() {
    for (i, x) in [0.3, -1.7, 0.001].into_iter().enumerate() {
        let (ok, mean, se) = unbiased_within_three_se(x, 8, 100_000, 100 + i as u64);
        assert!(ok, "x = {x}: mean {mean}, se {se}");
    }
}

#[test]
fn unbiased_at_four_and_sixteen_bits() {
    for wl in [4, 16] {
        for x in [0.3, -1.7, 0.001, 2.9] {
            let (ok, mean, se) = unbiased_within_three_se(x, wl, 20_000, 7);
            assert!(ok, "wl {wl} x = {x}: mean {mean}, se {se}");
        }
    }
}

proptest! {
    #[test]
    fn outputs_are_on_grid(values in prop::collection::vec(-50.0f64..50.0, 1..40), wl in prop::sample::select(vec![4u32, 8, 16]), seed in any::<u64>()) {
        let f = derive_format(&values, wl).unwrap();
        let q = quantize_tensor(&values, wl, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (v, r) in values.iter().zip(&q) {
            prop_assert!(on_grid(*r, &f));
            // one step of rounding, plus at most one of saturation at the top
            prop_assert!((r - v).abs() <= 2.0 * f.step() + 1e-12);
        }
        // the derived range covers the data after at most one step of saturation
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs <= f.max_value() + f.step());
    }

    #[test]
    fn quantization_is_idempotent_on_its_grid(ks in prop::collection::vec(-8i32..8, 1..30), frac in -3i32..10, seed in any::<u64>()) {
        // integer multiples of 2^-frac whose own derived 4-bit format has that step
        let step = 2f64.powi(-frac);
        let values: Vec<f64> = ks.iter().map(|&k| f64::from(k) * step).collect();
        let f = derive_format(&values, 4).unwrap();
        prop_assume!(values.iter().all(|&v| on_grid(v, &f)));
        let q = quantize_tensor(&values, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(q, values);
    }

    #[test]
    fn requantizing_stays_on_a_grid(values in prop::collection::vec(-3.0f32..3.0, 1..30), wl in prop::sample::select(vec![4u32, 8, 16]), seed in any::<u64>()) {
        // a power-of-two maximum can move down one step when the format is
        // re-derived, but the result is always on the new grid
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let once = quantize_tensor(&values, wl, &mut rng).unwrap();
        let twice = quantize_tensor(&once, wl, &mut rng).unwrap();
        let f = derive_format(&once, wl).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!(on_grid(f64::from(*b), &f));
            prop_assert!(f64::from((a - b).abs()) <= f.step());
        }
    }

    #[test]
    fn thirty_two_bits_is_bitwise_identity(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..30)) {
        let q = quantize_tensor(&values, 32, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(
            q.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn saturation_is_monotone(x in 0.0f64..1e6, seed in any::<u64>()) {
        let f = FixedPointFormat::new(4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = stochastic_round(f.max_value() + x, &f, &mut rng);
        let down = stochastic_round(f.min_value() - x, &f, &mut rng);
        prop_assert_eq!(up, f.max_value());
        prop_assert_eq!(down, f.min_value());
    }
}
