use rand::Rng;

use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax_forward, LayerParams, LayerSpec, Shape, Tensor,
};
use super::real::Real;
use super::CnnError;

/// Number of output classes for every dataset handled here.
pub const NUM_CLASSES: usize = 10;

/// A layer with its inferred shapes and (for conv/dense) its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub params: Option<LayerParams<T>>,
}

/// Feed-forward network over `(channels, height, width)` samples.
///
/// Cloning is deep: every clone owns its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Shape,
    layers: Vec<Layer<T>>,
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(network: &Network<T>) -> Self {
        Self {
            layers: network
                .layers
                .iter()
                .map(|l| l.params.as_ref().map(LayerParams::zeros_like))
                .collect(),
        }
    }

    /// Weight and bias tensors in network order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn add_assign(&mut self, other: &GradientSet<T>) -> Result<(), CnnError> {
        if self.layers.len() != other.layers.len() {
            return Err(CnnError::ShapeMismatch("gradient layer count".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a.weight.dims() != b.weight.dims() || a.bias.dims() != b.bias.dims() {
                        return Err(CnnError::ShapeMismatch("gradient tensor dims".into()));
                    }
                    for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                        *x += *y;
                    }
                    for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                        *x += *y;
                    }
                }
                (None, None) => {}
                _ => return Err(CnnError::ShapeMismatch("gradient layer kinds".into())),
            }
        }
        Ok(())
    }
}

/// Per-layer activations of one forward pass.
///
/// `activations[0]` is the input and `activations[i + 1]` the output of
/// layer `i`; the last entry holds the class probabilities.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    pub activations: Vec<Vec<T>>,
    pub pool_argmax: Vec<Option<Vec<u32>>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn probabilities(&self) -> &[T] {
        self.activations.last().expect("cache holds the input")
    }

    /// Inputs of the final softmax, if the network ends with one.
    pub fn logits(&self) -> Option<&[T]> {
        let n = self.activations.len();
        (n >= 2).then(|| self.activations[n - 2].as_slice())
    }

    /// True when every ReLU gate and pooling winner agrees with `other`.
    pub fn same_pattern(&self, other: &ForwardCache<T>, network: &Network<T>) -> bool {
        network.layers.iter().enumerate().all(|(i, layer)| match layer.spec {
            LayerSpec::Relu => self.activations[i]
                .iter()
                .zip(&other.activations[i])
                .all(|(a, b)| (*a > T::zero()) == (*b > T::zero())),
            LayerSpec::MaxPool { .. } => self.pool_argmax[i] == other.pool_argmax[i],
            _ => true,
        })
    }
}

fn glorot<T: Real, R: Rng + ?Sized>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(dims, data).expect("dims match data")
}

impl<T: Real> Network<T> {
    /// Infers every layer's shapes and initializes weights uniformly in
    /// `±sqrt(6 / (fan_in + fan_out))` with zero biases.
    pub fn new<R: Rng + ?Sized>(input_shape: Shape, specs: &[LayerSpec], rng: &mut R) -> Result<Self, CnnError> {
        if input_shape.is_empty() {
            return Err(CnnError::InvalidArchitecture(format!("empty input shape {input_shape}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        for (index, &spec) in specs.iter().enumerate() {
            let (output, params) = match spec {
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } => {
                    if kernel == 0 || out_channels == 0 {
                        return Err(CnnError::InvalidArchitecture(format!("layer {index}: {spec}")));
                    }
                    if shape.height < kernel || shape.width < kernel {
                        return Err(CnnError::ShapeUnderflow { layer: index, input: shape });
                    }
                    let out = Shape::new(out_channels, shape.height - kernel + 1, shape.width - kernel + 1);
                    let area = kernel * kernel;
                    let weight = glorot(
                        &[out_channels, shape.channels, kernel, kernel],
                        shape.channels * area,
                        out_channels * area,
                        rng,
                    );
                    (
                        out,
                        Some(LayerParams {
                            weight,
                            bias: Tensor::zeros(&[out_channels]),
                        }),
                    )
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window == 0 || window != stride {
                        return Err(CnnError::InvalidArchitecture(format!(
                            "layer {index}: pooling windows must be non-overlapping, got {spec}"
                        )));
                    }
                    let out = Shape::new(shape.channels, shape.height.div_ceil(stride), shape.width.div_ceil(stride));
                    (out, None)
                }
                LayerSpec::Relu => (shape, None),
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(CnnError::InvalidArchitecture(format!("layer {index}: {spec}")));
                    }
                    let inputs = shape.len();
                    let weight = glorot(&[units, inputs], inputs, units, rng);
                    (
                        Shape::new(units, 1, 1),
                        Some(LayerParams {
                            weight,
                            bias: Tensor::zeros(&[units]),
                        }),
                    )
                }
                LayerSpec::Softmax { classes } => {
                    if shape.len() != classes {
                        return Err(CnnError::InvalidArchitecture(format!(
                            "layer {index}: softmax over {classes} classes fed {} values",
                            shape.len()
                        )));
                    }
                    (Shape::new(classes, 1, 1), None)
                }
            };
            layers.push(Layer {
                spec,
                input: shape,
                output,
                params,
            });
            shape = output;
        }
        Ok(Self { input_shape, layers })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input_shape, |l| l.output)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Weight and bias tensors in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    /// Total count of weights plus biases.
    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Same architecture with every parameter converted to `U`.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let convert = |t: &Tensor<T>| {
            Tensor::from_vec(t.dims(), t.data().iter().map(|v| U::from_f64(v.as_f64())).collect())
                .expect("same dims")
        };
        Network {
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    input: l.input,
                    output: l.output,
                    params: l.params.as_ref().map(|p| LayerParams {
                        weight: convert(&p.weight),
                        bias: convert(&p.bias),
                    }),
                })
                .collect(),
        }
    }

    /// Runs `batch` samples stored contiguously in `input`.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<ForwardCache<T>, CnnError> {
        self.forward_locked(input, batch, None)
    }

    /// Forward pass; with `lock`, ReLU gates and pooling winners are copied
    /// from that earlier pass on the same batch instead of recomputed.
    pub fn forward_locked(
        &self,
        input: &[T],
        batch: usize,
        lock: Option<&ForwardCache<T>>,
    ) -> Result<ForwardCache<T>, CnnError> {
        if input.len() != batch * self.input_shape.len() {
            return Err(CnnError::ShapeMismatch(format!(
                "expected {batch} samples of {}, got {} values",
                self.input_shape,
                input.len()
            )));
        }
        if let Some(lock) = lock {
            if lock.batch != batch || lock.activations.len() != self.layers.len() + 1 {
                return Err(CnnError::ShapeMismatch("lock cache from a different pass".into()));
            }
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &activations[i];
            let mut argmax = None;
            let y = match (layer.spec, layer.params.as_ref()) {
                (LayerSpec::Conv { kernel, .. }, Some(p)) => conv_forward(p, kernel, layer.input, layer.output, x, batch),
                (LayerSpec::Dense { units }, Some(p)) => dense_forward(p, layer.input.len(), units, x, batch),
                (LayerSpec::Relu, _) => relu_forward(x, lock.map(|l| l.activations[i].as_slice())),
                (LayerSpec::MaxPool { window, stride }, _) => {
                    let locked = lock.and_then(|l| l.pool_argmax[i].as_deref());
                    let (y, idx) = maxpool_forward(layer.input, layer.output, window, stride, x, batch, locked);
                    argmax = Some(idx);
                    y
                }
                (LayerSpec::Softmax { classes }, _) => softmax_forward(x, classes),
                (spec, None) => unreachable!("{spec} built without parameters"),
            };
            debug_assert_eq!(y.len(), batch * layer.output.len());
            activations.push(y);
            pool_argmax.push(argmax);
        }
        Ok(ForwardCache {
            batch,
            activations,
            pool_argmax,
        })
    }

    /// Gradients of the mean cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[u8]) -> Result<GradientSet<T>, CnnError> {
        let scale = T::one() / T::from_f64(cache.batch.max(1) as f64);
        self.backward_scaled(cache, labels, scale)
    }

    /// Like [`Network::backward`] but the summed per-sample loss is
    /// multiplied by `scale` instead of divided by the batch size.
    pub fn backward_scaled(&self, cache: &ForwardCache<T>, labels: &[u8], scale: T) -> Result<GradientSet<T>, CnnError> {
        let batch = cache.batch;
        if labels.len() != batch || cache.activations.len() != self.layers.len() + 1 {
            return Err(CnnError::ShapeMismatch(format!(
                "cache for {batch} samples, {} labels",
                labels.len()
            )));
        }
        let classes = match self.layers.last().map(|l| l.spec) {
            Some(LayerSpec::Softmax { classes }) => classes,
            _ => {
                return Err(CnnError::InvalidArchitecture(
                    "training requires a final softmax layer".into(),
                ))
            }
        };
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= classes) {
            return Err(CnnError::ShapeMismatch(format!("label {bad} out of range")));
        }
        // softmax + cross-entropy: (p - onehot) * scale at the logits
        let mut delta: Vec<T> = cache.probabilities().iter().map(|&p| p * scale).collect();
        for (s, &l) in labels.iter().enumerate() {
            delta[s * classes + usize::from(l)] -= scale;
        }
        let mut grads = GradientSet::zeros_like(self);
        let last = self.layers.len() - 1;
        for i in (0..last).rev() {
            let layer = &self.layers[i];
            let x = &cache.activations[i];
            let need_input_grad = i > 0;
            let dx = match (layer.spec, layer.params.as_ref()) {
                (LayerSpec::Conv { kernel, .. }, Some(p)) => {
                    let g = grads.layers[i].as_mut().expect("conv gradient slot");
                    conv_backward(p, g, kernel, layer.input, layer.output, x, &delta, batch, need_input_grad)
                }
                (LayerSpec::Dense { units }, Some(p)) => {
                    let g = grads.layers[i].as_mut().expect("dense gradient slot");
                    dense_backward(p, g, layer.input.len(), units, x, &delta, batch, need_input_grad)
                }
                (LayerSpec::Relu, _) => Some(relu_backward(x, &delta)),
                (LayerSpec::MaxPool { .. }, _) => {
                    let argmax = cache.pool_argmax[i].as_ref().expect("pool argmax cached");
                    Some(maxpool_backward(layer.input, layer.output, argmax, &delta, batch))
                }
                (LayerSpec::Softmax { .. }, _) => {
                    return Err(CnnError::InvalidArchitecture("softmax must be the final layer".into()))
                }
                (spec, None) => unreachable!("{spec} built without parameters"),
            };
            match dx {
                Some(dx) => delta = dx,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Plain SGD: `param -= learning_rate * grad`.
    pub fn sgd_step(&mut self, grads: &GradientSet<T>, learning_rate: T) -> Result<(), CnnError> {
        if grads.layers.len() != self.layers.len() {
            return Err(CnnError::ShapeMismatch("gradient layer count".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer.params.as_mut(), g) {
                (Some(p), Some(g)) => {
                    if p.weight.dims() != g.weight.dims() || p.bias.dims() != g.bias.dims() {
                        return Err(CnnError::ShapeMismatch("gradient tensor dims".into()));
                    }
                    for (w, d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                        *w -= learning_rate * *d;
                    }
                    for (b, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                        *b -= learning_rate * *d;
                    }
                }
                (None, None) => {}
                _ => return Err(CnnError::ShapeMismatch("gradient layer kinds".into())),
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy of the cached batch, computed from the logits.
pub fn cross_entropy<T: Real>(cache: &ForwardCache<T>, labels: &[u8]) -> f64 {
    let classes = cache.probabilities().len() / cache.batch.max(1);
    let logits = cache.logits().unwrap_or(cache.probabilities());
    let mut total = 0.0;
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[usize::from(label)].as_f64();
    }
    total / cache.batch.max(1) as f64
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// LeNet-5 style stack: two conv5/ReLU/maxpool2 stages, a hidden ReLU layer
/// and a 10-way softmax.
pub fn lenet_specs(conv_channels: (usize, usize), hidden_units: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            kernel: 5,
            out_channels: conv_channels.0,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv {
            kernel: 5,
            out_channels: conv_channels.1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Dense { units: hidden_units },
        LayerSpec::Relu,
        LayerSpec::Dense { units: NUM_CLASSES },
        LayerSpec::Softmax { classes: NUM_CLASSES },
    ]
}

pub fn build_lenet<T: Real, R: Rng + ?Sized>(
    input_shape: Shape,
    conv_channels: (usize, usize),
    hidden_units: usize,
    rng: &mut R,
) -> Result<Network<T>, CnnError> {
    Network::new(input_shape, &lenet_specs(conv_channels, hidden_units), rng)
}
