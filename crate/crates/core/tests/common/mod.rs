//! Synthetic labelled images shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbnet_core::data::Dataset;
use sbnet_core::subband::Image;

/// Class `c` draws a bright 4-pixel-wide stroke whose position and
/// orientation depend on `c`, over low-level noise. Easy to separate, but
/// only through spatial structure.
pub fn strokes(name: &str, n: usize, channels: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        let mut img = Image::zeros(channels, side, side);
        let c = class as usize;
        let offset = 3 + (c % 5) * (side - 8) / 5;
        for ch in 0..channels {
            for y in 0..side {
                for x in 0..side {
                    let on = if c < 5 { (x >= offset && x < offset + 4) && y > 2 } else { (y >= offset && y < offset + 4) && x > 2 };
                    let v = if on { 0.8 + 0.2 * rng.gen::<f32>() } else { 0.15 * rng.gen::<f32>() };
                    img.set(ch, y, x, (v * 255.0).round() / 255.0);
                }
            }
        }
        images.push(img);
        labels.push(class);
    }
    Dataset::new(name, images, labels).unwrap()
}

pub fn random_image(rng: &mut impl Rng, channels: usize, height: usize, width: usize) -> Image {
    let data = (0..channels * height * width).map(|_| rng.gen::<f32>()).collect();
    Image::new(channels, height, width, data).unwrap()
}
