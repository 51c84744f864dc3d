use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::network::{argmax, cross_entropy, GradientSet, Network, NUM_CLASSES};
use super::real::Real;
use super::CnnError;
use crate::data::Dataset;
use crate::qnum::RoundingSchedule;

/// Samples per unit of parallel work. Gradients are reduced chunk by chunk in
/// index order, so results do not depend on the thread count.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub seed: u64,
    pub word_bits: u32,
    pub schedule: RoundingSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 64,
            hidden_units: 500,
            seed: 0,
            word_bits: 32,
            schedule: RoundingSchedule::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CnnError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CnnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.hidden_units == 0 {
            return Err(CnnError::InvalidConfig("hidden_units must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one pass over the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// Fraction of samples misclassified by the network at the time their
    /// batch was processed.
    pub train_error: f64,
    pub mean_loss: f64,
    /// Those same predictions, `NUM_CLASSES` per sample, in dataset order.
    pub probabilities: Vec<f32>,
}

fn gather<T: Real>(data: &Dataset, indices: &[usize]) -> (Vec<T>, Vec<u8>) {
    let len = data.images.first().map_or(0, |i| i.len());
    let mut input = Vec::with_capacity(indices.len() * len);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        input.extend(data.images[i].data().iter().map(|&v| T::from_f32(v)));
        labels.push(data.labels[i]);
    }
    (input, labels)
}

fn check_dataset<T: Real>(network: &Network<T>, data: &Dataset) -> Result<(), CnnError> {
    match data.shape() {
        None => Err(CnnError::EmptyDataset),
        Some(shape) if shape != network.input_shape() => Err(CnnError::ShapeMismatch(format!(
            "dataset samples are {shape}, network expects {}",
            network.input_shape()
        ))),
        Some(_) => Ok(()),
    }
}

struct ChunkResult<T> {
    grads: GradientSet<T>,
    loss_sum: f64,
    probabilities: Vec<f32>,
}

/// One shuffled pass of minibatch SGD. The final partial batch is used.
pub fn train_epoch<T: Real, R: Rng + ?Sized>(
    network: &mut Network<T>,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<EpochReport, CnnError> {
    check_dataset(network, data)?;
    if config.batch_size == 0 {
        return Err(CnnError::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let lr = T::from_f64(config.learning_rate);
    let mut probabilities = vec![0f32; data.len() * NUM_CLASSES];
    let mut wrong = 0usize;
    let mut loss_total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let scale = T::one() / T::from_f64(batch.len() as f64);
        let net = &*network;
        let results = batch
            .par_chunks(CHUNK)
            .map(|chunk| -> Result<ChunkResult<T>, CnnError> {
                let (input, labels) = gather::<T>(data, chunk);
                let cache = net.forward(&input, chunk.len())?;
                let grads = net.backward_scaled(&cache, &labels, scale)?;
                Ok(ChunkResult {
                    grads,
                    loss_sum: cross_entropy(&cache, &labels) * chunk.len() as f64,
                    probabilities: cache.probabilities().iter().map(|v| v.as_f64() as f32).collect(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut total: Option<GradientSet<T>> = None;
        for (chunk, result) in batch.chunks(CHUNK).zip(results) {
            for (&sample, p) in chunk.iter().zip(result.probabilities.chunks_exact(NUM_CLASSES)) {
                if argmax(p) != usize::from(data.labels[sample]) {
                    wrong += 1;
                }
                probabilities[sample * NUM_CLASSES..(sample + 1) * NUM_CLASSES].copy_from_slice(p);
            }
            loss_total += result.loss_sum;
            match total.as_mut() {
                None => total = Some(result.grads),
                Some(t) => t.add_assign(&result.grads)?,
            }
        }
        if let Some(grads) = total {
            network.sgd_step(&grads, lr)?;
        }
    }
    Ok(EpochReport {
        train_error: wrong as f64 / data.len() as f64,
        mean_loss: loss_total / data.len() as f64,
        probabilities,
    })
}

/// Class probabilities for every sample, `NUM_CLASSES` per sample, in order.
pub fn predict_proba<T: Real>(network: &Network<T>, data: &Dataset) -> Result<Vec<f32>, CnnError> {
    check_dataset(network, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let parts = indices
        .par_chunks(4 * CHUNK)
        .map(|chunk| -> Result<Vec<f32>, CnnError> {
            let (input, _) = gather::<T>(data, chunk);
            let cache = network.forward(&input, chunk.len())?;
            Ok(cache.probabilities().iter().map(|v| v.as_f64() as f32).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.concat())
}

/// Fraction of rows whose argmax (ties to the lowest index) differs from the label.
pub fn error_rate(probabilities: &[f32], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let classes = probabilities.len() / labels.len();
    let wrong = probabilities
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(p, &l)| argmax(p) != usize::from(l))
        .count();
    wrong as f64 / labels.len() as f64
}

pub fn evaluate<T: Real>(network: &Network<T>, data: &Dataset) -> Result<f64, CnnError> {
    Ok(error_rate(&predict_proba(network, data)?, &data.labels))
}

/// Mean cross-entropy over `data` without updating the network.
pub fn dataset_loss<T: Real>(network: &Network<T>, data: &Dataset) -> Result<f64, CnnError> {
    check_dataset(network, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(4 * CHUNK) {
        let (input, labels) = gather::<T>(data, chunk);
        let cache = network.forward(&input, chunk.len())?;
        total += cross_entropy(&cache, &labels) * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{build_lenet, LayerSpec, Shape};
    use crate::subband::Image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Ten classes of 16x16 images: a bright bar whose row encodes the class,
    /// plus noise.
    fn bars(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 10) as u8;
            let mut img = Image::zeros(1, 16, 16);
            for x in 2..14 {
                img.set(0, 2 + usize::from(label), x, 1.0);
            }
            for v in img.data_mut() {
                *v = (*v + rng.gen_range(0.0..0.3)).min(1.0);
            }
            images.push(img);
            labels.push(label);
        }
        Dataset::new("bars", images, labels).unwrap()
    }

    fn small_net(seed: u64) -> Network<f32> {
        build_lenet(Shape::new(1, 16, 16), (4, 6), 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn batch_count_includes_partial_batch() {
        // 100 samples at batch 64: a full step and a 36-sample step. Equivalent
        // to running the two batches by hand.
        let data = bars(100, 1);
        let config = TrainConfig {
            batch_size: 64,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut trained = small_net(2);
        let mut manual = trained.clone();
        train_epoch(&mut trained, &data, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

        let mut order: Vec<usize> = (0..100).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let batches: Vec<&[usize]> = order.chunks(64).collect();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[1].len(), 36);
        for batch in batches {
            let (input, labels) = gather::<f32>(&data, batch);
            let cache = manual.forward(&input, batch.len()).unwrap();
            let grads = manual.backward(&cache, &labels).unwrap();
            manual.sgd_step(&grads, 0.05).unwrap();
        }
        for (a, b) in trained.tensors().zip(manual.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_network_unchanged() {
        let data = bars(50, 3);
        let mut net = small_net(4);
        let before = net.clone();
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let report = train_epoch(&mut net, &data, &config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(net, before);
        assert_eq!(report.train_error, evaluate(&net, &data).unwrap());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = bars(80, 6);
        let config = TrainConfig {
            batch_size: 20,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = small_net(7);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for _ in 0..2 {
                train_epoch(&mut net, &data, &config, &mut rng).unwrap();
            }
            net
        };
        let (a, b) = (run(), run());
        for (x, y) in a.tensors().zip(b.tensors()) {
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = bars(70, 10);
        let config = TrainConfig {
            batch_size: 35,
            ..TrainConfig::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut net = small_net(11);
                train_epoch(&mut net, &data, &config, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
                net
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn loss_decreases_on_fixed_subset() {
        let data = bars(100, 13);
        let mut net = small_net(14);
        let initial = dataset_loss(&net, &data).unwrap();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 100,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            train_epoch(&mut net, &data, &config, &mut rng).unwrap();
        }
        let after = dataset_loss(&net, &data).unwrap();
        assert!(after < initial, "{after} !< {initial}");
    }

    #[test]
    fn learns_the_bar_task() {
        let train = bars(400, 16);
        let test = bars(100, 17);
        let mut net = small_net(18);
        let config = TrainConfig {
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..5 {
            train_epoch(&mut net, &train, &config, &mut rng).unwrap();
        }
        assert!(evaluate(&net, &test).unwrap() < 0.1);
    }

    #[test]
    fn evaluation_error_rates() {
        // constant predictor of class 0 on balanced data
        let data = bars(100, 20);
        let mut net = Network::<f32>::new(
            Shape::new(1, 16, 16),
            &[LayerSpec::Dense { units: 10 }, LayerSpec::Softmax { classes: 10 }],
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        net.tensors_mut().for_each(|t| t.fill(0.0));
        net.tensors_mut().nth(1).unwrap().data_mut()[0] = 1.0;
        assert!((evaluate(&net, &data).unwrap() - 0.9).abs() < 1e-12);

        let mut perfect = vec![0f32; 30];
        for (i, l) in [3u8, 0, 9].iter().enumerate() {
            perfect[i * 10 + usize::from(*l)] = 1.0;
        }
        assert_eq!(error_rate(&perfect, &[3, 0, 9]), 0.0);
        // ties resolve low: an all-equal row predicts class 0
        assert_eq!(error_rate(&[0.1; 10], &[0]), 0.0);
    }

    #[test]
    fn empty_and_mismatched_datasets_are_rejected() {
        let empty = Dataset::new("e", vec![], vec![]).unwrap();
        let mut net = small_net(21);
        assert!(matches!(evaluate(&net, &empty), Err(CnnError::EmptyDataset)));
        let config = TrainConfig::default();
        assert!(matches!(
            train_epoch(&mut net, &empty, &config, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(CnnError::EmptyDataset)
        ));
        let wrong = Dataset::new("w", vec![Image::zeros(1, 20, 20)], vec![0]).unwrap();
        assert!(matches!(evaluate(&net, &wrong), Err(CnnError::ShapeMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(CnnError::InvalidConfig(_))));
        }
    }
}
