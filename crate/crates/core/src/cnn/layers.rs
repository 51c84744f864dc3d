//! Layer descriptions and the per-layer forward/backward kernels.
//!
//! Activations for a batch are stored contiguously, sample-major, each sample
//! laid out as `(channels, height, width)`.

use std::fmt;

use super::real::{matmul, plain, trans, Real};

/// `(channels, height, width)` of one sample's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl From<(usize, usize, usize)> for Shape {
    fn from((channels, height, width): (usize, usize, usize)) -> Self {
        Self::new(channels, height, width)
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Option<Self> {
        (dims.iter().product::<usize>() == data.len()).then(|| Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// One stage of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Square kernel, valid padding, stride 1.
    Conv { kernel: usize, out_channels: usize },
    /// Non-overlapping max pooling; a trailing partial window is kept.
    MaxPool { window: usize, stride: usize },
    Relu,
    /// Fully connected over the flattened input.
    Dense { units: usize },
    Softmax { classes: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                kernel,
                out_channels,
            } => write!(f, "conv{kernel}x{kernel}({out_channels})"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool{window}/{stride}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Softmax { classes } => write!(f, "softmax({classes})"),
        }
    }
}

/// Trainable tensors of a conv or dense layer.
///
/// Conv weights are `(out, in, k, k)`; dense weights are `(units, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            weight: Tensor::zeros(other.weight.dims()),
            bias: Tensor::zeros(other.bias.dims()),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn im2col<T: Real>(x: &[T], input: Shape, kernel: usize, out: Shape, col: &mut [T]) {
    let n = out.height * out.width;
    let mut row = 0;
    for c in 0..input.channels {
        let plane = &x[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..out.height {
                    let src = &plane[(oy + ky) * input.width + kx..][..out.width];
                    dst[oy * out.width..(oy + 1) * out.width].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], input: Shape, kernel: usize, out: Shape, dx: &mut [T]) {
    let n = out.height * out.width;
    let mut row = 0;
    for c in 0..input.channels {
        let plane = &mut dx[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..out.height {
                    let dst = &mut plane[(oy + ky) * input.width + kx..][..out.width];
                    for (d, s) in dst.iter_mut().zip(&src[oy * out.width..(oy + 1) * out.width]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    params: &LayerParams<T>,
    kernel: usize,
    input: Shape,
    out: Shape,
    x: &[T],
    batch: usize,
) -> Vec<T> {
    let k = input.channels * kernel * kernel;
    let n = out.height * out.width;
    let mut col = vec![T::zero(); k * n];
    let mut y = vec![T::zero(); batch * out.len()];
    for s in 0..batch {
        im2col(&x[s * input.len()..(s + 1) * input.len()], input, kernel, out, &mut col);
        let ys = &mut y[s * out.len()..(s + 1) * out.len()];
        for (o, row) in ys.chunks_exact_mut(n).enumerate() {
            row.fill(params.bias.data()[o]);
        }
        matmul(out.channels, k, n, plain(params.weight.data()), plain(&col), ys, true);
    }
    y
}

/// Accumulates weight/bias gradients into `grads`; returns the input
/// gradient when `need_input_grad`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    params: &LayerParams<T>,
    grads: &mut LayerParams<T>,
    kernel: usize,
    input: Shape,
    out: Shape,
    x: &[T],
    dy: &[T],
    batch: usize,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let k = input.channels * kernel * kernel;
    let n = out.height * out.width;
    let mut col = vec![T::zero(); k * n];
    let mut dcol = vec![T::zero(); k * n];
    let mut dx = need_input_grad.then(|| vec![T::zero(); batch * input.len()]);
    for s in 0..batch {
        let dys = &dy[s * out.len()..(s + 1) * out.len()];
        im2col(&x[s * input.len()..(s + 1) * input.len()], input, kernel, out, &mut col);
        matmul(out.channels, n, k, plain(dys), trans(&col), grads.weight.data_mut(), true);
        for (b, row) in grads.bias.data_mut().iter_mut().zip(dys.chunks_exact(n)) {
            *b += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            matmul(k, out.channels, n, trans(params.weight.data()), plain(dys), &mut dcol, false);
            col2im_add(&dcol, input, kernel, out, &mut dx[s * input.len()..(s + 1) * input.len()]);
        }
    }
    dx
}

pub(crate) fn dense_forward<T: Real>(params: &LayerParams<T>, inputs: usize, units: usize, x: &[T], batch: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * units);
    for _ in 0..batch {
        y.extend_from_slice(params.bias.data());
    }
    matmul(batch, inputs, units, plain(x), trans(params.weight.data()), &mut y, true);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    params: &LayerParams<T>,
    grads: &mut LayerParams<T>,
    inputs: usize,
    units: usize,
    x: &[T],
    dy: &[T],
    batch: usize,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    matmul(units, batch, inputs, trans(dy), plain(x), grads.weight.data_mut(), true);
    for row in dy.chunks_exact(units) {
        for (b, d) in grads.bias.data_mut().iter_mut().zip(row) {
            *b += *d;
        }
    }
    need_input_grad.then(|| {
        let mut dx = vec![T::zero(); batch * inputs];
        matmul(batch, units, inputs, plain(dy), plain(params.weight.data()), &mut dx, false);
        dx
    })
}

/// Max pooling; `argmax` receives, per output element, the flat index of the
/// winning input element within its sample. Ties go to the first element in
/// row-major window order.
pub(crate) fn maxpool_forward<T: Real>(
    input: Shape,
    out: Shape,
    window: usize,
    stride: usize,
    x: &[T],
    batch: usize,
    locked: Option<&[u32]>,
) -> (Vec<T>, Vec<u32>) {
    let mut y = Vec::with_capacity(batch * out.len());
    let mut argmax = Vec::with_capacity(batch * out.len());
    for s in 0..batch {
        let xs = &x[s * input.len()..(s + 1) * input.len()];
        for c in 0..input.channels {
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let idx = if let Some(lock) = locked {
                        lock[y.len()] as usize
                    } else {
                        let mut best = usize::MAX;
                        for iy in oy * stride..(oy * stride + window).min(input.height) {
                            for ix in ox * stride..(ox * stride + window).min(input.width) {
                                let i = (c * input.height + iy) * input.width + ix;
                                if best == usize::MAX || xs[i] > xs[best] {
                                    best = i;
                                }
                            }
                        }
                        best
                    };
                    y.push(xs[idx]);
                    argmax.push(idx as u32);
                }
            }
        }
    }
    (y, argmax)
}

pub(crate) fn maxpool_backward<T: Real>(input: Shape, out: Shape, argmax: &[u32], dy: &[T], batch: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * input.len()];
    for s in 0..batch {
        let dxs = &mut dx[s * input.len()..(s + 1) * input.len()];
        let range = s * out.len()..(s + 1) * out.len();
        for (&i, &d) in argmax[range.clone()].iter().zip(&dy[range]) {
            dxs[i as usize] += d;
        }
    }
    dx
}

pub(crate) fn relu_forward<T: Real>(x: &[T], locked: Option<&[T]>) -> Vec<T> {
    match locked {
        None => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        Some(reference) => x
            .iter()
            .zip(reference)
            .map(|(&v, &r)| if r > T::zero() { v } else { T::zero() })
            .collect(),
    }
}

pub(crate) fn relu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
        .collect()
}

/// Row-wise softmax with max-logit subtraction.
pub(crate) fn softmax_forward<T: Real>(x: &[T], classes: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = y.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            y.push(e);
        }
        for v in &mut y[start..] {
            *v = *v / sum;
        }
    }
    y
}
