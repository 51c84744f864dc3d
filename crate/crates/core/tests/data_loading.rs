use std::io::Write;
use std::path::Path;

use sbnet_core::cnn::Shape;
use sbnet_core::data::{decompose_dataset, encode, image_to_bytes, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES};
use sbnet_core::harness::{load_splits, DatasetKind, ExperimentConfig, HarnessError};

fn cifar_records(n: usize, seed: usize) -> Vec<(u8, Vec<u8>)> {
    (0..n)
        .map(|i| ((i % 10) as u8, (0..3072).map(|p| ((p * 13 + i * 5 + seed) % 256) as u8).collect()))
        .collect()
}

fn write_cifar(dir: &Path, per_batch: usize) {
    for (b, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        std::fs::write(dir.join(name), encode::cifar(&cifar_records(per_batch, b))).unwrap();
    }
    std::fs::write(dir.join(CIFAR_TEST_FILE), encode::cifar(&cifar_records(per_batch, 99))).unwrap();
}

#[test]
fn cifar_subset_and_full_modes() {
    let dir = tempfile::tempdir().unwrap();
    let batches = dir.path().join("cifar-10-batches-bin");
    std::fs::create_dir_all(&batches).unwrap();
    write_cifar(&batches, 30);

    let mut config = ExperimentConfig::for_dataset(DatasetKind::Cifar10);
    config.data_dir = dir.path().to_path_buf();
    config.train_limit = Some(100);
    let s = load_splits(&config).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (100, 30));
    assert_eq!(s.train.shape(), Some(Shape::new(3, 32, 32)));
    // batches are concatenated in order
    assert_eq!(image_to_bytes(&s.train.images[31]), cifar_records(30, 1)[1].1);

    config.train_limit = None;
    assert_eq!(load_splits(&config).unwrap().train.len(), 150);

    let bands = decompose_dataset(&s.test).unwrap();
    assert_eq!(bands.pairs[0].g1.shape(), (3, 16, 16));
    assert_eq!(bands.pairs[0].l0.shape(), (3, 32, 32));
    assert_eq!(bands.labels, s.test.labels);
}

#[test]
fn gzipped_mnist_in_a_subdirectory() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    std::fs::create_dir_all(&mnist).unwrap();
    let images: Vec<Vec<u8>> = (0..12).map(|i| (0..784).map(|p| ((p + i * 3) % 256) as u8).collect()).collect();
    let labels: Vec<u8> = (0..12).map(|i| (i % 10) as u8).collect();
    let gz = |bytes: Vec<u8>| {
        let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        e.write_all(&bytes).unwrap();
        e.finish().unwrap()
    };
    for prefix in ["train", "t10k"] {
        std::fs::write(mnist.join(format!("{prefix}-images-idx3-ubyte.gz")), gz(encode::mnist_images(&images, 28, 28))).unwrap();
        std::fs::write(mnist.join(format!("{prefix}-labels-idx1-ubyte")), encode::mnist_labels(&labels)).unwrap();
    }
    let mut config = ExperimentConfig::for_dataset(DatasetKind::Mnist);
    config.data_dir = dir.path().to_path_buf();
    config.test_limit = Some(5);
    let s = load_splits(&config).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (12, 5));
    for (img, raw) in s.train.images.iter().zip(&images) {
        assert_eq!(&image_to_bytes(img), raw);
    }

    // a mismatched label count is a data error
    std::fs::write(mnist.join("t10k-labels-idx1-ubyte"), encode::mnist_labels(&labels[..11])).unwrap();
    let err = load_splits(&config).unwrap_err();
    assert!(matches!(err, HarnessError::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}
