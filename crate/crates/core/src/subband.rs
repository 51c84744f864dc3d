//! Two-band Burt pyramid split of an image into an edge band (`l0`) and a
//! half-resolution texture band (`g1`).
//!
//! Filtering uses the separable 5-tap generating kernel `[1, 4, 6, 4, 1] / 16`
//! applied independently to every channel. Blur and reduce mirror the signal
//! about the border with the edge pixel repeated, which keeps the kernel
//! normalized at every output position (constants and total mass survive).
//! Expand blurs a zero-interleaved signal with gain 2 per axis and mirrors
//! about the edge pixel without repeating it, so that every output position
//! receives exactly half of the kernel mass from the non-zero samples.
//!
//! All accumulation happens in `f64`; only the final result is rounded to the
//! `f32` storage of [`Image`].

use std::io::{self, Read, Write};

use thiserror::Error;

/// Burt generating kernel, unnormalized.
const KERNEL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
const KERNEL_SUM: f64 = 16.0;

/// Magic bytes of a serialized band record.
pub const SBND_MAGIC: &[u8; 4] = b"SBND";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubbandError {
    #[error("invalid image shape {channels}x{height}x{width} for {len} values")]
    InvalidShape {
        channels: usize,
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image too small to decompose: {height}x{width} (need at least 2x2)")]
    ImageTooSmall { height: usize, width: usize },
}

/// Dense `(channels, height, width)` image, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, SubbandError> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(SubbandError::InvalidShape {
                channels,
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "image dimensions must be positive");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Largest elementwise absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f64, SubbandError> {
        if self.shape() != other.shape() {
            return Err(SubbandError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max))
    }
}

/// Edge band at full resolution plus texture band at half resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandPair {
    pub l0: Image,
    pub g1: Image,
}

#[derive(Clone, Copy)]
enum Border {
    /// Mirror with the edge sample repeated: `-1 -> 0`, `-2 -> 1`.
    HalfSample,
    /// Mirror about the edge sample: `-1 -> 1`, `-2 -> 2`.
    WholeSample,
}

fn reflect(i: isize, n: usize, border: Border) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        match border {
            Border::HalfSample => {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - 1 - i;
                } else {
                    return i as usize;
                }
            }
            Border::WholeSample => {
                if i < 0 {
                    i = -i;
                } else if i >= n {
                    i = 2 * (n - 1) - i;
                } else {
                    return i as usize;
                }
            }
        }
    }
}

/// Separable 5-tap filter over one `height x width` plane.
fn filter_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    (gain_y, gain_x): (f64, f64),
    border: Border,
) -> Vec<f64> {
    let scale_x = gain_x / KERNEL_SUM;
    let scale_y = gain_y / KERNEL_SUM;
    let mut rows = vec![0.0; height * width];
    for y in 0..height {
        let src = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, k) in KERNEL.iter().enumerate() {
                acc += k * src[reflect(x as isize + t as isize - 2, width, border)];
            }
            rows[y * width + x] = acc * scale_x;
        }
    }
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for (t, k) in KERNEL.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - 2, height, border);
            let src = &rows[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
        for d in &mut out[y * width..(y + 1) * width] {
            *d *= scale_y;
        }
    }
    out
}

fn plane_f64(image: &Image, c: usize) -> Vec<f64> {
    image.plane(c).iter().map(|&v| f64::from(v)).collect()
}

fn blur_planes(image: &Image) -> Vec<Vec<f64>> {
    (0..image.channels)
        .map(|c| filter_plane(&plane_f64(image, c), image.height, image.width, (1.0, 1.0), Border::HalfSample))
        .collect()
}

fn to_image(channels: usize, height: usize, width: usize, planes: Vec<Vec<f64>>) -> Image {
    let data = planes.into_iter().flatten().map(|v| v as f32).collect();
    Image {
        channels,
        height,
        width,
        data,
    }
}

/// Blur every channel with the normalized Burt kernel.
pub fn gaussian_blur(image: &Image) -> Image {
    to_image(image.channels, image.height, image.width, blur_planes(image))
}

fn reduce_planes(image: &Image) -> (usize, usize, Vec<Vec<f64>>) {
    let (h, w) = (image.height, image.width);
    let (rh, rw) = (h.div_ceil(2), w.div_ceil(2));
    let planes = blur_planes(image)
        .into_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(rh * rw);
            for y in (0..h).step_by(2) {
                for x in (0..w).step_by(2) {
                    out.push(p[y * w + x]);
                }
            }
            out
        })
        .collect();
    (rh, rw, planes)
}

/// Blur then keep even-indexed rows and columns.
pub fn reduce(image: &Image) -> Image {
    let (rh, rw, planes) = reduce_planes(image);
    to_image(image.channels, rh, rw, planes)
}

fn expand_planes(
    image: &Image,
    target_height: usize,
    target_width: usize,
) -> Result<Vec<Vec<f64>>, SubbandError> {
    if target_height == 0
        || target_width == 0
        || target_height.div_ceil(2) != image.height
        || target_width.div_ceil(2) != image.width
    {
        return Err(SubbandError::DimensionMismatch(format!(
            "cannot expand {}x{} to {}x{}",
            image.height, image.width, target_height, target_width
        )));
    }
    // a length-1 axis has nothing interleaved into it
    let gain = |n: usize| if n == 1 { 1.0 } else { 2.0 };
    let gains = (gain(target_height), gain(target_width));
    Ok((0..image.channels)
        .map(|c| {
            let src = image.plane(c);
            let mut up = vec![0.0; target_height * target_width];
            for y in 0..image.height {
                for x in 0..image.width {
                    up[2 * y * target_width + 2 * x] = f64::from(src[y * image.width + x]);
                }
            }
            filter_plane(&up, target_height, target_width, gains, Border::WholeSample)
        })
        .collect())
}

/// Zero-interleave to `target_height x target_width` and interpolate.
pub fn expand(
    image: &Image,
    target_height: usize,
    target_width: usize,
) -> Result<Image, SubbandError> {
    let planes = expand_planes(image, target_height, target_width)?;
    Ok(to_image(image.channels, target_height, target_width, planes))
}

/// Split `image` into `g1 = reduce(image)` and `l0 = image - expand(g1)`.
pub fn decompose(image: &Image) -> Result<SubbandPair, SubbandError> {
    if image.height < 2 || image.width < 2 {
        return Err(SubbandError::ImageTooSmall {
            height: image.height,
            width: image.width,
        });
    }
    let g1 = reduce(image);
    let expanded = expand_planes(&g1, image.height, image.width)?;
    let n = image.height * image.width;
    let data = expanded
        .iter()
        .enumerate()
        .flat_map(|(c, plane)| {
            image.data[c * n..(c + 1) * n]
                .iter()
                .zip(plane)
                .map(|(&v, e)| (f64::from(v) - e) as f32)
        })
        .collect();
    let l0 = Image {
        channels: image.channels,
        height: image.height,
        width: image.width,
        data,
    };
    Ok(SubbandPair { l0, g1 })
}

/// Inverse of [`decompose`]: `l0 + expand(g1)`.
pub fn reconstruct(pair: &SubbandPair) -> Result<Image, SubbandError> {
    let SubbandPair { l0, g1 } = pair;
    if l0.channels != g1.channels {
        return Err(SubbandError::DimensionMismatch(format!(
            "l0 has {} channels, g1 has {}",
            l0.channels, g1.channels
        )));
    }
    let expanded = expand_planes(g1, l0.height, l0.width)?;
    let n = l0.height * l0.width;
    let data = expanded
        .iter()
        .enumerate()
        .flat_map(|(c, plane)| {
            l0.data[c * n..(c + 1) * n]
                .iter()
                .zip(plane)
                .map(|(&v, e)| (f64::from(v) + e) as f32)
        })
        .collect();
    Ok(Image {
        channels: l0.channels,
        height: l0.height,
        width: l0.width,
        data,
    })
}

/// Write one band record: `SBND`, channels, height, width (u32 LE), then f32 LE data.
pub fn write_sbnd<W: Write>(writer: &mut W, image: &Image) -> io::Result<()> {
    writer.write_all(SBND_MAGIC)?;
    for dim in [image.channels, image.height, image.width] {
        let dim = u32::try_from(dim)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))?;
        writer.write_all(&dim.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(image.data.len() * 4);
    for v in &image.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&buf)
}

/// Read the next band record, or `None` at a clean end of stream.
pub fn read_sbnd<R: Read>(reader: &mut R) -> io::Result<Option<Image>> {
    let mut header = [0u8; 16];
    let mut filled = 0;
    while filled < header.len() {
        let n = reader.read(&mut header[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled == 0 {
        return Ok(None);
    }
    if filled < header.len() {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated SBND header"));
    }
    if &header[..4] != SBND_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad SBND magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (channels, height, width) = (dim(4), dim(8), dim(12));
    let mut raw = vec![0u8; channels * height * width * 4];
    reader.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::new(channels, height, width, data)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BINOMIAL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

    /// Brute-force 2-D convolution with the outer-product kernel, mirroring
    /// indices with the edge sample repeated.
    fn brute_blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mirror = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
            }
            i as usize
        };
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -2isize..=2 {
                    for dx in -2isize..=2 {
                        let k = BINOMIAL[(dy + 2) as usize] * BINOMIAL[(dx + 2) as usize] / 256.0;
                        let sy = mirror(y as isize + dy, h);
                        let sx = mirror(x as isize + dx, w);
                        acc += k * img[sy * w + sx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    fn impulse(h: usize, w: usize, y: usize, x: usize) -> Image {
        let mut img = Image::zeros(1, h, w);
        img.set(0, y, x, 1.0);
        img
    }

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
        let data = (0..c * h * w).map(|_| rng.gen::<f32>()).collect();
        Image::new(c, h, w, data).unwrap()
    }

    #[test]
    fn image_rejects_bad_shape() {
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(2, 7, 5, 0.3);
        let out = gaussian_blur(&img);
        assert!(out.max_abs_diff(&img).unwrap() < 1e-7);
    }

    #[test]
    fn blur_of_single_pixel_is_identity() {
        let img = Image::filled(1, 1, 1, 0.625);
        assert_eq!(gaussian_blur(&img).data(), &[0.625]);
    }

    #[test]
    fn centered_impulse_gives_outer_product() {
        let out = gaussian_blur(&impulse(5, 5, 2, 2));
        let mut src = vec![0.0; 25];
        src[12] = 1.0;
        let oracle = brute_blur(&src, 5, 5);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-7);
        }
        for (i, tap) in BINOMIAL.iter().enumerate() {
            let expected = tap * BINOMIAL[2] / 256.0;
            assert!((f64::from(out.get(0, 2, i)) - expected).abs() < 1e-7);
            assert!((f64::from(out.get(0, i, 2)) - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn blur_matches_brute_force_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(2, 2), (3, 7), (6, 4), (9, 9)] {
            let img = random_image(&mut rng, 1, h, w);
            let src: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
            let oracle = brute_blur(&src, h, w);
            for (a, b) in gaussian_blur(&img).data().iter().zip(&oracle) {
                assert!((f64::from(*a) - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (h, w) in [(5, 5), (28, 28), (7, 9), (2, 3)] {
            let img = random_image(&mut rng, 3, h, w);
            let before: f64 = img.data().iter().map(|&v| f64::from(v)).sum();
            let after: f64 = gaussian_blur(&img).data().iter().map(|&v| f64::from(v)).sum();
            assert!(((after - before) / before).abs() < 1e-6, "{h}x{w}: {before} vs {after}");
        }
    }

    #[test]
    fn reduce_shapes_and_constants() {
        let out = reduce(&Image::filled(1, 4, 4, 0.7));
        assert_eq!(out.shape(), (1, 2, 2));
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        assert_eq!(reduce(&Image::zeros(1, 5, 5)).shape(), (1, 3, 3));
        assert_eq!(reduce(&Image::zeros(3, 1, 1)).shape(), (3, 1, 1));
    }

    #[test]
    fn reduce_impulse_matches_blur_then_decimate_oracle() {
        let mut src = vec![0.0; 35];
        src[2 * 7 + 3] = 1.0;
        let blurred = brute_blur(&src, 5, 7);
        let out = reduce(&impulse(5, 7, 2, 3));
        assert_eq!(out.shape(), (1, 3, 4));
        for y in 0..3 {
            for x in 0..4 {
                let expected = blurred[(2 * y) * 7 + 2 * x];
                assert!((f64::from(out.get(0, y, x)) - expected).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn expand_constants_and_shape() {
        let out = expand(&Image::filled(1, 2, 2, 0.4), 4, 4).unwrap();
        assert_eq!(out.shape(), (1, 4, 4));
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-7));
        let single = expand(&Image::filled(1, 1, 2, 0.9), 1, 4).unwrap();
        assert!(single.data().iter().all(|&v| (v - 0.9).abs() < 1e-6));
        let odd = expand(&Image::filled(2, 3, 2, 1.5), 5, 3).unwrap();
        assert_eq!(odd.shape(), (2, 5, 3));
        assert!(odd.data().iter().all(|&v| (v - 1.5).abs() < 1e-6));
    }

    #[test]
    fn expand_rejects_wrong_target() {
        let img = Image::zeros(1, 2, 2);
        assert!(matches!(expand(&img, 5, 4), Err(SubbandError::DimensionMismatch(_))));
        assert!(matches!(expand(&img, 4, 2), Err(SubbandError::DimensionMismatch(_))));
    }

    #[test]
    fn expand_impulse_matches_interleave_oracle() {
        // Zero-interleave, then a brute-force 2-D blur with gain 4 that mirrors
        // about the edge sample.
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i as usize
        };
        let mut up = [[0.0f64; 4]; 4];
        up[0][0] = 1.0;
        let out = expand(&impulse(2, 2, 0, 0), 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut acc = 0.0;
                for dy in -2isize..=2 {
                    for dx in -2isize..=2 {
                        let k = 4.0 * BINOMIAL[(dy + 2) as usize] * BINOMIAL[(dx + 2) as usize] / 256.0;
                        acc += k * up[mirror(y as isize + dy, 4)][mirror(x as isize + dx, 4)];
                    }
                }
                assert!((f64::from(out.get(0, y, x)) - acc).abs() < 1e-7, "({y},{x})");
            }
        }
        // the (0, 0) sample: 4 * 6 * 6 / 256
        assert!((f64::from(out.get(0, 0, 0)) - 0.5625).abs() < 1e-7);
    }

    #[test]
    fn decompose_constant() {
        let img = Image::filled(3, 6, 5, 0.3);
        let pair = decompose(&img).unwrap();
        assert!(pair.l0.data().iter().all(|v| v.abs() <= 1e-9));
        assert_eq!(pair.g1.shape(), (3, 3, 3));
        assert!(pair.g1.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn decompose_rejects_thin_images() {
        assert!(matches!(
            decompose(&Image::zeros(1, 1, 5)),
            Err(SubbandError::ImageTooSmall { .. })
        ));
        assert!(decompose(&Image::zeros(1, 2, 2)).is_ok());
    }

    #[test]
    fn reconstruct_from_zero_edge_band() {
        let pair = SubbandPair {
            l0: Image::zeros(1, 6, 6),
            g1: Image::filled(1, 3, 3, 0.25),
        };
        let out = reconstruct(&pair).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn reconstruct_rejects_inconsistent_pair() {
        let pair = SubbandPair {
            l0: Image::zeros(1, 6, 6),
            g1: Image::zeros(1, 4, 3),
        };
        assert!(reconstruct(&pair).is_err());
        let pair = SubbandPair {
            l0: Image::zeros(1, 6, 6),
            g1: Image::zeros(2, 3, 3),
        };
        assert!(reconstruct(&pair).is_err());
    }

    #[test]
    fn sbnd_round_trip_and_header_layout() {
        let img = Image::new(1, 2, 3, vec![0.0, 1.0, -2.5, 3.25, 4.0, 5.5]).unwrap();
        let mut buf = Vec::new();
        write_sbnd(&mut buf, &img).unwrap();
        write_sbnd(&mut buf, &img).unwrap();
        assert_eq!(&buf[..4], b"SBND");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&buf[16..20], &0.0f32.to_le_bytes());
        assert_eq!(buf.len(), 2 * (16 + 24));
        let mut cursor = io::Cursor::new(buf);
        assert_eq!(read_sbnd(&mut cursor).unwrap(), Some(img.clone()));
        assert_eq!(read_sbnd(&mut cursor).unwrap(), Some(img));
        assert_eq!(read_sbnd(&mut cursor).unwrap(), None);
    }
}
