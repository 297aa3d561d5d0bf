//! Layer nodes: parameters, gradients, forward caches and backward passes.

use crate::error::{Error, Result};
use crate::ops::{self, ActivationKind, ConvSpec};
use crate::rng::Rng;
use crate::tensor::{Dist, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its gradient (always the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), value, grad }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    /// Replace the value; the shape must not change.
    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch { left: value.shape().to_vec(), right: self.value.shape().to_vec() });
        }
        self.value = value;
        Ok(())
    }

    pub(crate) fn set_grad(&mut self, grad: Tensor) {
        debug_assert_eq!(grad.shape(), self.value.shape());
        self.grad = grad;
    }

    /// Value (mutable) and gradient, borrowed together for optimizer updates.
    pub(crate) fn value_and_grad(&mut self) -> (&mut [f64], &[f64]) {
        (self.value.data_mut(), self.grad.data())
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Uniform in ±sqrt(6 / fan_in).
fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::random(shape, Dist::Uniform { lo: -bound, hi: bound }, rng).expect("validated shape and bounds")
}

/// Per-item activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn with_batch(self, n: usize) -> Vec<usize> {
        match self {
            FeatureShape::Image { c, h, w } => vec![n, c, h, w],
            FeatureShape::Flat(f) => vec![n, f],
        }
    }

    fn image(self, what: &'static str) -> Result<(usize, usize, usize)> {
        match self {
            FeatureShape::Image { c, h, w } => Ok((c, h, w)),
            FeatureShape::Flat(_) => Err(Error::layer(what, "expects image-shaped input")),
        }
    }

    pub fn elements(self) -> usize {
        match self {
            FeatureShape::Image { c, h, w } => c * h * w,
            FeatureShape::Flat(f) => f,
        }
    }
}

impl std::fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureShape::Image { c, h, w } => write!(f, "{c}x{h}x{w}"),
            FeatureShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d {
    spec: ConvSpec,
    weight: Param,
    bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let weight = fan_in_uniform(&spec.weight_shape(), spec.fan_in(), rng);
        let bias = spec.bias.then(|| Tensor::zeros(&[spec.out_channels]));
        Self::from_weights(spec, weight, bias)
    }

    pub fn from_weights(spec: ConvSpec, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        spec.validate()?;
        if weight.shape() != spec.weight_shape() {
            return Err(Error::layer(
                "conv2d",
                format!("weight shape {:?}, expected {:?}", weight.shape(), spec.weight_shape()),
            ));
        }
        if bias.is_some() != spec.bias {
            return Err(Error::layer("conv2d", "bias presence disagrees with spec"));
        }
        if let Some(b) = &bias {
            if b.shape() != [spec.out_channels] {
                return Err(Error::layer("conv2d", "bias length must equal out_channels"));
            }
        }
        Ok(Self { spec, weight: Param::new("weight", weight), bias: bias.map(|b| Param::new("bias", b)), input: None })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, self.weight.value(), self.bias.as_ref().map(Param::value), &self.spec)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(Error::NoForwardCache { layer: "conv2d" })?;
        let (gx, gw, gb) = ops::conv2d_backward(x, self.weight.value(), grad, &self.spec)?;
        self.weight.set_grad(gw);
        if let (Some(bias), Some(gb)) = (self.bias.as_mut(), gb) {
            bias.set_grad(gb);
        }
        Ok(gx)
    }

    fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        let (c, h, w) = input.image("conv2d")?;
        if c != self.spec.in_channels {
            return Err(Error::layer(
                "conv2d",
                format!("input has {c} channels, layer expects {}", self.spec.in_channels),
            ));
        }
        Ok(FeatureShape::Image {
            c: self.spec.out_channels,
            h: self.spec.output_extent(h)?,
            w: self.spec.output_extent(w)?,
        })
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ChannelShuffle {
    groups: usize,
}

impl ChannelShuffle {
    pub fn new(groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::layer("channel_shuffle", "groups must be positive"));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        ops::channel_shuffle(x, self.groups)
    }

    pub fn backward(&self, grad: &Tensor) -> Result<Tensor> {
        ops::channel_unshuffle(grad, self.groups)
    }
}

// ---------------------------------------------------------------------------

/// Fuses `G` channel groups: each group `i` goes through its own 1×1
/// convolution `W_i` to a common width `C_r`, is rectified, and the `G` terms
/// are summed, `R = Σ_i relu(W_i · Y_i)`.
#[derive(Debug, Clone)]
pub struct GroupRecombine {
    channels: usize,
    groups: usize,
    out_channels: usize,
    weights: Vec<Param>,
    cache: Option<RecombineCache>,
}

#[derive(Debug, Clone)]
struct RecombineCache {
    slices: Vec<Tensor>,
    pre_activation: Vec<Tensor>,
}

impl GroupRecombine {
    pub fn new(channels: usize, groups: usize, out_channels: usize, rng: &mut Rng) -> Result<Self> {
        Self::check_dims(channels, groups, out_channels)?;
        let per = channels / groups;
        let weights = (0..groups).map(|_| fan_in_uniform(&[out_channels, per, 1, 1], per, rng)).collect();
        Self::from_weights(channels, groups, out_channels, weights)
    }

    pub fn from_weights(channels: usize, groups: usize, out_channels: usize, weights: Vec<Tensor>) -> Result<Self> {
        Self::check_dims(channels, groups, out_channels)?;
        let expected = [out_channels, channels / groups, 1, 1];
        if weights.len() != groups || weights.iter().any(|w| w.shape() != expected) {
            return Err(Error::layer("group_recombine", format!("need {groups} weights shaped {expected:?}")));
        }
        Ok(Self {
            channels,
            groups,
            out_channels,
            weights: weights.into_iter().enumerate().map(|(i, w)| Param::new(format!("w{i}"), w)).collect(),
            cache: None,
        })
    }

    fn check_dims(channels: usize, groups: usize, out_channels: usize) -> Result<()> {
        if groups == 0 || out_channels == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::layer(
                "group_recombine",
                format!("{channels} channels not divisible into {groups} groups"),
            ));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn term_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.channels / self.groups, self.out_channels)
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, RecombineCache)> {
        let [n, c, h, w] = x.dims4("group_recombine")?;
        if c != self.channels {
            return Err(Error::layer(
                "group_recombine",
                format!("input has {c} channels, layer expects {}", self.channels),
            ));
        }
        let per = c / self.groups;
        let spec = self.term_spec();
        let mut out = Tensor::zeros(&[n, self.out_channels, h, w]);
        let mut slices = Vec::with_capacity(self.groups);
        let mut pre_activation = Vec::with_capacity(self.groups);
        for (i, wi) in self.weights.iter().enumerate() {
            let slice = ops::channel_slice(x, i * per, per)?;
            let z = ops::conv2d(&slice, wi.value(), None, &spec)?;
            for (acc, &v) in out.data_mut().iter_mut().zip(z.data()) {
                *acc += v.max(0.0);
            }
            slices.push(slice);
            pre_activation.push(z);
        }
        Ok((out, RecombineCache { slices, pre_activation }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x).map(|(y, _)| y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "group_recombine" })?;
        let [n, _, h, w] = grad.dims4("group_recombine")?;
        let per = self.channels / self.groups;
        let spec = self.term_spec();
        let mut gx = Tensor::zeros(&[n, self.channels, h, w]);
        for (i, wi) in self.weights.iter_mut().enumerate() {
            let gz = ops::activation_backward(&cache.pre_activation[i], grad, ActivationKind::Relu)?;
            let (gslice, gw, _) = ops::conv2d_backward(&cache.slices[i], wi.value(), &gz, &spec)?;
            wi.set_grad(gw);
            ops::add_into_channels(&mut gx, &gslice, i * per);
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics and hyperparameters of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    channels: usize,
    gamma: Param,
    beta: Param,
    state: BatchNormState,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::layer("batchnorm", "channels must be positive"));
        }
        Ok(Self {
            channels,
            gamma: Param::new("gamma", Tensor::create(&[channels], 1.0)?),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            state: BatchNormState {
                running_mean: Tensor::zeros(&[channels]),
                running_var: Tensor::create(&[channels], 1.0)?,
                momentum: BN_MOMENTUM,
                eps: BN_EPS,
            },
            cache: None,
        })
    }

    pub fn with_affine(channels: usize, gamma: Tensor, beta: Tensor) -> Result<Self> {
        let mut bn = Self::new(channels)?;
        bn.gamma.set_value(gamma)?;
        bn.beta.set_value(beta)?;
        Ok(bn)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state(&self) -> &BatchNormState {
        &self.state
    }

    pub fn set_running_stats(&mut self, mean: Tensor, var: Tensor) -> Result<()> {
        if mean.shape() != [self.channels] || var.shape() != [self.channels] {
            return Err(Error::layer("batchnorm", "running stats must have one entry per channel"));
        }
        if var.data().iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::layer("batchnorm", "running variance must be non-negative"));
        }
        self.state.running_mean = mean;
        self.state.running_var = var;
        Ok(())
    }

    fn check(&self, x: &Tensor) -> Result<[usize; 4]> {
        let dims = x.dims4("batchnorm")?;
        if dims[1] != self.channels {
            return Err(Error::layer(
                "batchnorm",
                format!("input has {} channels, layer has {}", dims[1], self.channels),
            ));
        }
        Ok(dims)
    }

    /// Normalise with the given per-channel statistics; returns `(y, x_hat)`.
    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let [_, c, h, w] = self.check(x).expect("checked");
        let plane = h * w;
        let (gamma, beta) = (self.gamma.value().data(), self.beta.value().data());
        let mut y = vec![0.0; x.len()];
        let mut x_hat = vec![0.0; x.len()];
        let planes = x.data().chunks_exact(plane).zip(y.chunks_exact_mut(plane)).zip(x_hat.chunks_exact_mut(plane));
        for (i, ((src, yo), xo)) in planes.enumerate() {
            let ch = i % c;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for ((&v, y), xh) in src.iter().zip(yo).zip(xo) {
                *xh = (v - mu) * is;
                *y = g * *xh + bt;
            }
        }
        let shape = x.shape().to_vec();
        (Tensor::from_parts(shape.clone(), y), Tensor::from_parts(shape, x_hat))
    }

    fn running_inv_std(&self) -> Vec<f64> {
        self.state.running_var.data().iter().map(|&v| 1.0 / (v + self.state.eps).sqrt()).collect()
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let inv_std = self.running_inv_std();
        Ok(self.normalize(x, self.state.running_mean.data(), &inv_std).0)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = self.check(x)?;
        let plane = h * w;
        let (mean, inv_std) = match mode {
            Mode::Eval => (self.state.running_mean.data().to_vec(), self.running_inv_std()),
            Mode::Train => {
                let m = (n * plane) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, src) in x.data().chunks_exact(plane).enumerate() {
                    mean[i % c] += ops::lane_sum(src);
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for (i, src) in x.data().chunks_exact(plane).enumerate() {
                    var[i % c] += ops::lane_sq_dev(src, mean[i % c]);
                }
                var.iter_mut().for_each(|v| *v /= m);

                let mom = self.state.momentum;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for (r, &bm) in self.state.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - mom) * *r + mom * bm;
                }
                for (r, &bv) in self.state.running_var.data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - mom) * *r + mom * bv * unbias;
                }
                let inv_std = var.iter().map(|&v| 1.0 / (v + self.state.eps).sqrt()).collect();
                (mean, inv_std)
            }
        };
        let (y, x_hat) = self.normalize(x, &mean, &inv_std);
        self.cache = Some(BnCache { x_hat, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache { layer: "batchnorm" })?;
        if grad.shape() != cache.x_hat.shape() {
            return Err(Error::ShapeMismatch { left: grad.shape().to_vec(), right: cache.x_hat.shape().to_vec() });
        }
        let [n, c, h, w] = grad.dims4("batchnorm")?;
        let plane = h * w;
        let m = (n * plane) as f64;
        let (gd, xh) = (grad.data(), cache.x_hat.data());
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (i, (g, x)) in gd.chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
            sum_g[i % c] += ops::lane_sum(g);
            sum_gx[i % c] += ops::dot(g, x);
        }
        let gamma = self.gamma.value().data();
        let mut gx = vec![0.0; grad.len()];
        let planes = gd.chunks_exact(plane).zip(xh.chunks_exact(plane)).zip(gx.chunks_exact_mut(plane));
        for (i, ((g, x), out)) in planes.enumerate() {
            let ch = i % c;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => {
                    for (o, &gv) in out.iter_mut().zip(g) {
                        *o = scale * gv;
                    }
                }
                Mode::Train => {
                    let (mg, mgx) = (sum_g[ch] / m, sum_gx[ch] / m);
                    for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(x) {
                        *o = scale * (gv - mg - xv * mgx);
                    }
                }
            }
        }
        self.gamma.set_grad(Tensor::from_parts(vec![c], sum_gx));
        self.beta.set_grad(Tensor::from_parts(vec![c], sum_g));
        Ok(Tensor::from_parts(grad.shape().to_vec(), gx))
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::layer("linear", "features must be positive"));
        }
        let weight = fan_in_uniform(&[out_features, in_features], in_features, rng);
        Self::from_weights(weight, Tensor::zeros(&[out_features]))
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [k, _] = weight.dims2("linear")?;
        if bias.shape() != [k] {
            return Err(Error::layer("linear", "bias length must equal output features"));
        }
        Ok(Self { weight: Param::new("weight", weight), bias: Param::new("bias", bias), input: None })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, self.weight.value(), self.bias.value())
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(Error::NoForwardCache { layer: "linear" })?;
        let (gx, gw, gb) = ops::linear_backward(x, self.weight.value(), grad)?;
        self.weight.set_grad(gw);
        self.bias.set_grad(gb);
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// One node of a sequential model.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Shuffle(ChannelShuffle),
    Recombine(GroupRecombine),
    BatchNorm(BatchNorm2d),
    Activation { kind: ActivationKind, input: Option<Tensor> },
    MaxPool { input_shape: Option<Vec<usize>>, argmax: Vec<usize> },
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Linear(Linear),
}

impl Layer {
    pub fn conv(spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        Conv2d::new(spec, rng).map(Layer::Conv)
    }

    pub fn shuffle(groups: usize) -> Result<Self> {
        ChannelShuffle::new(groups).map(Layer::Shuffle)
    }

    pub fn recombine(channels: usize, groups: usize, out: usize, rng: &mut Rng) -> Result<Self> {
        GroupRecombine::new(channels, groups, out, rng).map(Layer::Recombine)
    }

    pub fn batch_norm(channels: usize) -> Result<Self> {
        BatchNorm2d::new(channels).map(Layer::BatchNorm)
    }

    pub fn relu() -> Self {
        Layer::Activation { kind: ActivationKind::Relu, input: None }
    }

    pub fn relu6() -> Self {
        Layer::Activation { kind: ActivationKind::Relu6, input: None }
    }

    pub fn max_pool() -> Self {
        Layer::MaxPool { input_shape: None, argmax: Vec::new() }
    }

    pub fn global_avg_pool() -> Self {
        Layer::GlobalAvgPool { input_shape: None }
    }

    pub fn linear(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        Linear::new(in_features, out_features, rng).map(Layer::Linear)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Shuffle(_) => "shuffle",
            Layer::Recombine(_) => "recombine",
            Layer::BatchNorm(_) => "bn",
            Layer::Activation { kind: ActivationKind::Relu, .. } => "relu",
            Layer::Activation { kind: ActivationKind::Relu6, .. } => "relu6",
            Layer::MaxPool { .. } => "maxpool",
            Layer::GlobalAvgPool { .. } => "gap",
            Layer::Linear(_) => "linear",
        }
    }

    /// Eval-mode forward without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::Shuffle(l) => l.infer(x),
            Layer::Recombine(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Activation { kind, .. } => Ok(ops::activation(x, *kind)),
            Layer::MaxPool { .. } => ops::maxpool2x2(x).map(|(y, _)| y),
            Layer::GlobalAvgPool { .. } => ops::global_avg_pool(x),
            Layer::Linear(l) => l.infer(x),
        }
    }

    /// Forward pass that records what [`Layer::backward`] needs.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Shuffle(l) => l.infer(x),
            Layer::Recombine(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Activation { kind, input } => {
                let y = ops::activation(x, *kind);
                *input = Some(x.clone());
                Ok(y)
            }
            Layer::MaxPool { input_shape, argmax } => {
                let (y, arg) = ops::maxpool2x2(x)?;
                *input_shape = Some(x.shape().to_vec());
                *argmax = arg;
                Ok(y)
            }
            Layer::GlobalAvgPool { input_shape } => {
                let y = ops::global_avg_pool(x)?;
                *input_shape = Some(x.shape().to_vec());
                Ok(y)
            }
            Layer::Linear(l) => l.forward(x),
        }
    }

    /// Fills parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::Shuffle(l) => l.backward(grad),
            Layer::Recombine(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Activation { kind, input } => {
                let x = input.as_ref().ok_or(Error::NoForwardCache { layer: "activation" })?;
                ops::activation_backward(x, grad, *kind)
            }
            Layer::MaxPool { input_shape, argmax } => {
                let shape = input_shape.as_ref().ok_or(Error::NoForwardCache { layer: "maxpool2d" })?;
                ops::maxpool2x2_backward(shape, argmax, grad)
            }
            Layer::GlobalAvgPool { input_shape } => {
                let shape = input_shape.as_ref().ok_or(Error::NoForwardCache { layer: "global_avg_pool" })?;
                ops::global_avg_pool_backward(shape, grad)
            }
            Layer::Linear(l) => l.backward(grad),
        }
    }

    /// Drop forward caches.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.input = None,
            Layer::Recombine(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::Activation { input, .. } => *input = None,
            Layer::MaxPool { input_shape, argmax } => {
                *input_shape = None;
                argmax.clear();
            }
            Layer::GlobalAvgPool { input_shape } => *input_shape = None,
            Layer::Linear(l) => l.input = None,
            Layer::Shuffle(_) => {}
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::Recombine(l) => l.weights.iter().collect(),
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::Recombine(l) => l.weights.iter_mut().collect(),
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Shuffle(l) => {
                let (c, _, _) = input.image("channel_shuffle")?;
                if c % l.groups != 0 {
                    return Err(Error::layer(
                        "channel_shuffle",
                        format!("{c} channels not divisible into {} groups", l.groups),
                    ));
                }
                Ok(input)
            }
            Layer::Recombine(l) => {
                let (c, h, w) = input.image("group_recombine")?;
                if c != l.channels {
                    return Err(Error::layer("group_recombine", "channel count mismatch"));
                }
                Ok(FeatureShape::Image { c: l.out_channels, h, w })
            }
            Layer::BatchNorm(l) => {
                let (c, _, _) = input.image("batchnorm")?;
                if c != l.channels {
                    return Err(Error::layer("batchnorm", "channel count mismatch"));
                }
                Ok(input)
            }
            Layer::Activation { .. } => Ok(input),
            Layer::MaxPool { .. } => {
                let (c, h, w) = input.image("maxpool2d")?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::layer("maxpool2d", "spatial extent must be even"));
                }
                Ok(FeatureShape::Image { c, h: h / 2, w: w / 2 })
            }
            Layer::GlobalAvgPool { .. } => {
                let (c, _, _) = input.image("global_avg_pool")?;
                Ok(FeatureShape::Flat(c))
            }
            Layer::Linear(l) => match input {
                FeatureShape::Flat(f) if f == l.in_features() => Ok(FeatureShape::Flat(l.out_features())),
                _ => Err(Error::layer("linear", "input feature count mismatch")),
            },
        }
    }

    /// Multiply-accumulates per batch item for an input of shape `input`.
    pub fn macs(&self, input: FeatureShape) -> Result<u64> {
        let out = self.output_shape(input)?;
        let macs = match (self, out) {
            (Layer::Conv(l), FeatureShape::Image { h, w, .. }) => {
                let [co, cig, kh, kw] = l.spec.weight_shape();
                co * cig * kh * kw * h * w
            }
            (Layer::Recombine(l), FeatureShape::Image { h, w, .. }) => {
                l.groups * l.out_channels * (l.channels / l.groups) * h * w
            }
            (Layer::BatchNorm(_), shape) => 2 * shape.elements(),
            (Layer::Linear(l), _) => l.in_features() * l.out_features(),
            _ => 0,
        };
        Ok(macs as u64)
    }

    /// Non-trainable state serialized alongside parameters.
    pub(crate) fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::BatchNorm(l) => vec![("running_mean", &l.state.running_mean), ("running_var", &l.state.running_var)],
            _ => Vec::new(),
        }
    }

    pub(crate) fn set_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self {
            Layer::BatchNorm(l) => {
                let (mean, var) = match name {
                    "running_mean" => (value, l.state.running_var.clone()),
                    "running_var" => (l.state.running_mean.clone(), value),
                    _ => return Err(Error::ModelFormat(format!("unknown buffer `{name}`"))),
                };
                l.set_running_stats(mean, var)
            }
            _ => Err(Error::ModelFormat(format!("layer kind `{}` has no buffer `{name}`", self.kind()))),
        }
    }
}
