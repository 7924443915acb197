use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{shape_err, BatchNorm2d, Conv2d, Dense, Layer, MaxPool2d, Mode, NnError, Param, Relu, Scalar, Softmax, Tensor4};

/// Shape of a pre-activation CNN: one `BN -> ReLU -> Conv -> MaxPool` stage
/// per entry of `widths`, followed by `Dense -> Softmax`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// `(frequency, time)` pool size per stage.
    pub pools: Vec<(usize, usize)>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            widths: vec![48, 96, 128],
            kernel: 5,
            pools: vec![(4, 2), (4, 2), (2, 2)],
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths.is_empty() {
            return Err(NnError::Config("at least one convolutional stage is required".into()));
        }
        if self.widths.len() != self.pools.len() {
            return Err(NnError::Config(format!(
                "{} stage widths but {} pool sizes",
                self.widths.len(),
                self.pools.len()
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(NnError::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.widths.contains(&0) || self.pools.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(NnError::Config("widths and pool sizes must be positive".into()));
        }
        Ok(())
    }

    /// Smallest `(n_mels, frames)` input the pooling pyramid accepts.
    pub fn min_input(&self) -> (usize, usize) {
        self.pools.iter().fold((1, 1), |(h, w), &(ph, pw)| (h * ph, w * pw))
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    input: [usize; 3],
    n_classes: usize,
    seed: u64,
}

pub fn build_network<T: Scalar>(
    spec: &NetworkSpec,
    n_mels: usize,
    frames: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Network<T>, NnError> {
    spec.validate()?;
    if n_mels == 0 || frames == 0 || n_classes == 0 {
        return Err(NnError::Config(format!(
            "dimensions must be positive, got n_mels={n_mels} frames={frames} classes={n_classes}"
        )));
    }
    let (min_h, min_w) = spec.min_input();
    if n_mels < min_h || frames < min_w {
        return Err(NnError::Config(format!(
            "input {n_mels}x{frames} is too small for the pooling pyramid (needs at least {min_h}x{min_w})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, bound: f64| -> Vec<T> { (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect() };

    let mut layers = Vec::new();
    let mut shape = [1, n_mels, frames];
    for (&width, &pool) in spec.widths.iter().zip(&spec.pools) {
        let mut conv = Conv2d::same(shape[0], width, spec.kernel);
        let fan_in = shape[0] * spec.kernel * spec.kernel;
        conv.weight = uniform(conv.weight.len(), (6.0 / fan_in as f64).sqrt());
        layers.push(Layer::BatchNorm(BatchNorm2d::new(shape[0])));
        layers.push(Layer::Relu(Relu::new()));
        layers.push(Layer::Conv2d(conv));
        layers.push(Layer::MaxPool(MaxPool2d::new(pool)));
        shape = [width, shape[1] / pool.0, shape[2] / pool.1];
    }
    let flat = shape.iter().product();
    let mut dense = Dense::new(flat, n_classes);
    dense.weight = uniform(dense.weight.len(), (6.0 / (flat + n_classes) as f64).sqrt());
    layers.push(Layer::Dense(dense));
    layers.push(Layer::Softmax(Softmax::new()));

    Network::from_layers(layers, [1, n_mels, frames], seed)
}

/// The full-size network (about 0.5M weights) in `f32` with seed 0.
pub fn build_baseline(n_mels: usize, frames: usize, n_classes: usize) -> Result<Network<f32>, NnError> {
    build_network(&NetworkSpec::default(), n_mels, frames, n_classes, 0)
}

impl<T: Scalar> Network<T> {
    /// Checks that the layer stack composes for `input` and ends in `[K, 1, 1]`.
    pub fn from_layers(layers: Vec<Layer<T>>, input: [usize; 3], seed: u64) -> Result<Self, NnError> {
        let mut shape = input;
        for layer in &layers {
            shape = layer.output_shape(shape)?;
        }
        if shape[1] != 1 || shape[2] != 1 {
            return Err(NnError::Config(format!("network output must be [K, 1, 1], got {shape:?}")));
        }
        Ok(Network {
            layers,
            input,
            n_classes: shape[0],
            seed,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(), NnError> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.input {
            return Err(shape_err("network input", &self.input, &[c, h, w]));
        }
        Ok(())
    }

    /// Returns `batch x K` probabilities as a `[batch, K, 1, 1]` tensor.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Read-only inference; safe to call from several threads at once.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_infer(&h)?;
        }
        Ok(h)
    }

    /// Back-propagates the gradient of the loss with respect to the output
    /// probabilities and accumulates parameter gradients.
    pub fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<Param<'_, T>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                let prefix = format!("layer{i}.{}", l.kind().name());
                l.params_mut(&prefix)
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    /// Trainable parameters; BatchNorm running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}
