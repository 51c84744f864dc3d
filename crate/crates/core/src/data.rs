//! MNIST (IDX) and CIFAR-10 (binary batch) loaders plus subband pairing.
//!
//! Pixels are scaled by `1 / 255` into `[0, 1]` with no other preprocessing.
//! Gzip-compressed files are detected by their `1f 8b` prefix and inflated
//! transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rayon::prelude::*;
use thiserror::Error;

use crate::cnn::Shape;
use crate::subband::{decompose, Image, SubbandError, SubbandPair};

pub const MNIST_IMAGES_MAGIC: u32 = 2051;
pub const MNIST_LABELS_MAGIC: u32 = 2049;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Canonical distribution names and MD5 digests of the gzipped MNIST files.
pub const MNIST_FILES: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    ("train-labels-idx1-ubyte", "d53e105ee54ea40749a09fcbcd1e9432"),
    ("t10k-images-idx3-ubyte", "9fb629c4189551a2d022fa330f9573f3"),
    ("t10k-labels-idx1-ubyte", "ec29112dd5afa0611ce80d1b7f02629c"),
];

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
/// MD5 of `cifar-10-binary.tar.gz`, which unpacks to `cifar-10-batches-bin/`.
pub const CIFAR_ARCHIVE_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found} (expected {expected})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: truncated ({detail})")]
    TruncatedFile { path: PathBuf, detail: String },
    #[error("{path}: label {label} out of range at record {index}")]
    LabelOutOfRange { path: PathBuf, index: usize, label: u8 },
    #[error("dataset is empty")]
    Empty,
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Subband(#[from] SubbandError),
}

/// Labelled images sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = images.first() {
            if let Some(odd) = images.iter().find(|i| i.shape() != first.shape()) {
                return Err(DataError::Inconsistent(format!(
                    "mixed shapes {:?} and {:?}",
                    first.shape(),
                    odd.shape()
                )));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l > 9) {
            return Err(DataError::Inconsistent(format!("label {label} outside 0..=9")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape of every sample, `None` when empty.
    pub fn shape(&self) -> Option<Shape> {
        self.images.first().map(|i| i.shape().into())
    }

    /// The first `n` samples (or all of them).
    pub fn truncated(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }
}

/// Per-sample subband pairs with the source labels in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandDataset {
    pub name: String,
    pub pairs: Vec<SubbandPair>,
    pub labels: Vec<u8>,
}

impl SubbandDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits into an edge-band and a texture-band dataset.
    pub fn into_bands(self) -> (Dataset, Dataset) {
        let (l0, g1): (Vec<_>, Vec<_>) = self.pairs.into_iter().map(|p| (p.l0, p.g1)).unzip();
        (
            Dataset {
                name: format!("{}-l0", self.name),
                images: l0,
                labels: self.labels.clone(),
            },
            Dataset {
                name: format!("{}-g1", self.name),
                images: g1,
                labels: self.labels,
            },
        )
    }
}

/// File contents, gunzipped when the file starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("header ends at byte {}", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into `(1, rows, cols)` images.
pub fn parse_mnist_images(bytes: &[u8], path: &Path) -> Result<Vec<Image>, DataError> {
    check_magic(bytes, MNIST_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("{} pixel bytes for {count} images of {rows}x{cols}", body.len()),
        });
    }
    body.chunks_exact(pixels.max(1))
        .take(count)
        .map(|chunk| {
            Image::new(1, rows, cols, chunk.iter().map(|&b| f32::from(b) / 255.0).collect()).map_err(Into::into)
        })
        .collect()
}

/// Parses an IDX1 label file.
pub fn parse_mnist_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, MNIST_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("{} label bytes for {count} labels", body.len()),
        });
    }
    if let Some((index, &label)) = body[..count].iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(DataError::LabelOutOfRange {
            path: path.to_path_buf(),
            index,
            label,
        });
    }
    Ok(body[..count].to_vec())
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_mnist_images(&read_maybe_gz(images_path)?, images_path)?;
    let labels = parse_mnist_labels(&read_maybe_gz(labels_path)?, labels_path)?;
    let name = images_path
        .file_name()
        .map_or_else(|| "mnist".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, images, labels)
}

/// Parses concatenated CIFAR-10 records: a label byte then 1024 R, G and B bytes.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<(Vec<Image>, Vec<u8>), DataError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("{} bytes is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (index, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(DataError::LabelOutOfRange {
                path: path.to_path_buf(),
                index,
                label,
            });
        }
        labels.push(label);
        let data = record[1..].iter().map(|&b| f32::from(b) / 255.0).collect();
        images.push(Image::new(3, 32, 32, data)?);
    }
    Ok((images, labels))
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset, DataError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let (i, l) = parse_cifar10(&read_maybe_gz(path)?, path)?;
        images.extend(i);
        labels.extend(l);
    }
    Dataset::new("cifar10", images, labels)
}

/// Serializes an image back to bytes (`round(v * 255)`), the inverse of loading.
pub fn image_to_bytes(image: &Image) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Decomposes every image, preserving order and labels.
pub fn decompose_dataset(dataset: &Dataset) -> Result<SubbandDataset, DataError> {
    let pairs = dataset
        .images
        .par_iter()
        .map(decompose)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SubbandDataset {
        name: dataset.name.clone(),
        pairs,
        labels: dataset.labels.clone(),
    })
}

/// Locates a file under `dir`, also trying a `.gz` suffix.
pub fn find_file(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))]
        .into_iter()
        .find(|p| p.is_file())
}

/// Expected MNIST file paths under `dir` (or `dir/mnist`).
pub fn mnist_paths(dir: &Path) -> Option<[PathBuf; 4]> {
    [dir.join("mnist"), dir.to_path_buf()].into_iter().find_map(|d| {
        let found: Vec<PathBuf> = MNIST_FILES.iter().filter_map(|(n, _)| find_file(&d, n)).collect();
        found.try_into().ok()
    })
}

/// Expected CIFAR-10 batch paths under `dir` (or `dir/cifar-10-batches-bin`):
/// `(training batches, test batch)`.
pub fn cifar_paths(dir: &Path) -> Option<(Vec<PathBuf>, PathBuf)> {
    [dir.join("cifar-10-batches-bin"), dir.to_path_buf()].into_iter().find_map(|d| {
        let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().filter_map(|n| find_file(&d, n)).collect();
        let test = find_file(&d, CIFAR_TEST_FILE)?;
        (train.len() == CIFAR_TRAIN_FILES.len()).then_some((train, test))
    })
}

/// Writers for the two binary formats, used by tests and fixture tooling.
pub mod encode {
    use super::*;

    pub fn mnist_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
        for v in [MNIST_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for img in images {
            out.extend_from_slice(img);
        }
        out
    }

    pub fn mnist_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + labels.len());
        out.extend_from_slice(&MNIST_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    /// `records` are `(label, 3072 channel-planar pixel bytes)`.
    pub fn cifar(records: &[(u8, Vec<u8>)]) -> Vec<u8> {
        let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
        for (label, pixels) in records {
            out.push(*label);
            out.extend_from_slice(pixels);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    fn sample_images(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| (0..28 * 28).map(|p| ((p * 31 + i * 7) % 256) as u8).collect()).collect()
    }

    #[test]
    fn mnist_parse_and_byte_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = sample_images(5);
        let labels = vec![0, 3, 9, 1, 4];
        let ip = write(dir.path(), "i", &encode::mnist_images(&raw, 28, 28));
        let lp = write(dir.path(), "l", &encode::mnist_labels(&labels));
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.shape(), Some(Shape::new(1, 28, 28)));
        assert_eq!(ds.labels, labels);
        for (img, bytes) in ds.images.iter().zip(&raw) {
            assert_eq!(&image_to_bytes(img), bytes);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn mnist_gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let raw = sample_images(3);
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        gz.write_all(&encode::mnist_images(&raw, 28, 28)).unwrap();
        let ip = write(dir.path(), "i.gz", &gz.finish().unwrap());
        let lp = write(dir.path(), "l", &encode::mnist_labels(&[1, 2, 3]));
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!(image_to_bytes(&ds.images[2]), raw[2]);
    }

    #[test]
    fn mnist_errors() {
        let dir = tempfile::tempdir().unwrap();
        let labels = encode::mnist_labels(&[1, 2]);
        // label file passed as images
        let lp = write(dir.path(), "l", &labels);
        assert!(matches!(
            load_mnist(&lp, &lp),
            Err(DataError::BadMagic { expected: 2051, found: 2049, .. })
        ));
        let ip = write(dir.path(), "i", &encode::mnist_images(&sample_images(3), 28, 28));
        assert!(matches!(load_mnist(&ip, &lp), Err(DataError::CountMismatch { images: 3, labels: 2 })));
        let mut short = encode::mnist_images(&sample_images(2), 28, 28);
        short.truncate(short.len() - 1);
        let sp = write(dir.path(), "s", &short);
        assert!(matches!(load_mnist(&sp, &lp), Err(DataError::TruncatedFile { .. })));
        let hp = write(dir.path(), "h", &[0, 0, 8]);
        assert!(matches!(load_mnist(&hp, &lp), Err(DataError::TruncatedFile { .. })));
        assert!(matches!(load_mnist(dir.path().join("missing"), &lp), Err(DataError::Io { .. })));
    }

    #[test]
    fn cifar_parse() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 3072];
        pixels[0] = 255; // R(0,0)
        pixels[1024 + 33] = 51; // G(1,1)
        pixels[2048 + 1023] = 102; // B(31,31)
        let p = write(dir.path(), "b", &encode::cifar(&[(7, pixels.clone()), (0, vec![0; 3072])]));
        let ds = load_cifar10(&[&p, &p]).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![7, 0, 7, 0]);
        let img = &ds.images[0];
        assert_eq!(img.shape(), (3, 32, 32));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 1, 1), 0.2);
        assert_eq!(img.get(2, 31, 31), 0.4);
        assert_eq!(image_to_bytes(img), pixels);
    }

    #[test]
    fn cifar_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t", &[0u8; 3072]);
        assert!(matches!(load_cifar10(&[&p]), Err(DataError::TruncatedFile { .. })));
        let p = write(dir.path(), "l", &encode::cifar(&[(10, vec![0; 3072])]));
        assert!(matches!(load_cifar10(&[&p]), Err(DataError::LabelOutOfRange { label: 10, .. })));
    }

    #[test]
    fn decompose_dataset_keeps_order_and_shapes() {
        let images: Vec<Image> = (0..6)
            .map(|i| Image::new(3, 32, 32, (0..3072).map(|p| ((p + i * 13) % 17) as f32 / 17.0).collect()).unwrap())
            .collect();
        let labels = vec![5, 1, 0, 9, 2, 2];
        let ds = Dataset::new("c", images.clone(), labels.clone()).unwrap();
        let sub = decompose_dataset(&ds).unwrap();
        assert_eq!(sub.len(), 6);
        assert_eq!(sub.labels, labels);
        for (pair, img) in sub.pairs.iter().zip(&images) {
            assert_eq!(pair.l0.shape(), (3, 32, 32));
            assert_eq!(pair.g1.shape(), (3, 16, 16));
            assert_eq!(pair, &decompose(img).unwrap());
        }
        let (l0, g1) = sub.into_bands();
        assert_eq!(l0.labels, labels);
        assert_eq!(g1.shape(), Some(Shape::new(3, 16, 16)));
    }

    #[test]
    fn dataset_validation() {
        let a = Image::zeros(1, 2, 2);
        let b = Image::zeros(1, 3, 2);
        assert!(matches!(Dataset::new("x", vec![a.clone()], vec![]), Err(DataError::CountMismatch { .. })));
        assert!(Dataset::new("x", vec![a.clone(), b], vec![0, 0]).is_err());
        assert!(Dataset::new("x", vec![a], vec![10]).is_err());
    }

    #[test]
    fn path_discovery() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("mnist");
        fs::create_dir(&sub).unwrap();
        for (name, _) in MNIST_FILES {
            fs::write(sub.join(format!("{name}.gz")), b"").unwrap();
        }
        let paths = mnist_paths(dir.path()).unwrap();
        assert!(paths[0].ends_with("mnist/train-images-idx3-ubyte.gz"));
        assert!(cifar_paths(dir.path()).is_none());
    }
}
