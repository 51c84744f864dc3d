//! MNIST-format fixtures for driving the `sbnet` binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbnet_core::data::encode;

/// `n` 28×28 images of class-dependent strokes over noise, as raw bytes.
pub fn stroke_bytes(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 10;
        let offset = 3 + (c % 5) * 4;
        let img = (0..28 * 28)
            .map(|p| {
                let (y, x) = (p / 28, p % 28);
                let on = if c < 5 { x >= offset && x < offset + 4 && y > 2 } else { y >= offset && y < offset + 4 && x > 2 };
                if on {
                    rng.gen_range(200..=255)
                } else {
                    rng.gen_range(0..40)
                }
            })
            .collect();
        images.push(img);
        labels.push(c as u8);
    }
    (images, labels)
}

/// Writes the four MNIST files with `train`/`test` synthetic samples.
pub fn write_mnist_fixture(dir: &Path, train: usize, test: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, n, seed) in [("train", train, 1), ("t10k", test, 2)] {
        let (images, labels) = stroke_bytes(n, seed);
        std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode::mnist_images(&images, 28, 28)).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode::mnist_labels(&labels)).unwrap();
    }
}

pub fn sbnet() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_sbnet"))
}

pub fn run_sbnet(args: &[&str]) -> Output {
    Command::new(sbnet()).args(args).output().expect("spawn sbnet")
}
