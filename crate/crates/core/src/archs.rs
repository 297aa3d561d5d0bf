//! Builders for the four edge classifiers.
//!
//! All take 3×64×64 inputs and emit two logits (natural, artificial). The
//! `*_lite` variants are scaled-down stand-ins built from each family's
//! canonical block; they exist for comparison, not as faithful replicas.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{FeatureShape, Layer};
use crate::model::Model;
use crate::ops::ConvSpec;
use crate::rng::Rng;

pub const INPUT: FeatureShape = FeatureShape::Image { c: 3, h: 64, w: 64 };
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    SimpleCnn,
    MobileNetV2Lite,
    ShuffleNetLite,
    MsNet,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::SimpleCnn, Arch::MobileNetV2Lite, Arch::ShuffleNetLite, Arch::MsNet];

    /// Identifier used in configs and file names.
    pub fn name(self) -> &'static str {
        match self {
            Arch::SimpleCnn => "simple_cnn",
            Arch::MobileNetV2Lite => "mobilenet_v2_lite",
            Arch::ShuffleNetLite => "shufflenet_lite",
            Arch::MsNet => "msnet",
        }
    }

    /// Column heading in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::SimpleCnn => "SimpleCNN",
            Arch::MobileNetV2Lite => "MobileNetV2",
            Arch::ShuffleNetLite => "ShuffleNet",
            Arch::MsNet => "MobileShuffleNet",
        }
    }

    /// Build with weights drawn from the `init/<name>` stream of `seed`.
    pub fn build(self, seed: u64) -> Result<Model> {
        let mut rng = Rng::new(seed, "init").child(self.name());
        let layers = match self {
            Arch::SimpleCnn => simple_cnn(&mut rng)?,
            Arch::MobileNetV2Lite => mobilenet_v2_lite(&mut rng)?,
            Arch::ShuffleNetLite => shufflenet_lite(&mut rng)?,
            Arch::MsNet => msnet(&mut rng)?,
        };
        Model::new(self.name(), INPUT, layers)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown architecture `{s}` (expected one of simple_cnn, mobilenet_v2_lite, shufflenet_lite, msnet)"
            ))
        })
    }
}

pub fn build_msnet(seed: u64) -> Result<Model> {
    Arch::MsNet.build(seed)
}

pub fn build_simple_cnn(seed: u64) -> Result<Model> {
    Arch::SimpleCnn.build(seed)
}

pub fn build_mobilenet_v2_lite(seed: u64) -> Result<Model> {
    Arch::MobileNetV2Lite.build(seed)
}

pub fn build_shufflenet_lite(seed: u64) -> Result<Model> {
    Arch::ShuffleNetLite.build(seed)
}

/// Small helper for appending conv/BN/activation runs.
struct Stack<'a> {
    rng: &'a mut Rng,
    layers: Vec<Layer>,
}

impl<'a> Stack<'a> {
    fn new(rng: &'a mut Rng) -> Self {
        Self { rng, layers: Vec::new() }
    }

    fn conv(&mut self, spec: ConvSpec) -> Result<&mut Self> {
        self.layers.push(Layer::conv(spec, self.rng)?);
        Ok(self)
    }

    /// conv → BN
    fn conv_bn(&mut self, spec: ConvSpec) -> Result<&mut Self> {
        self.conv(spec)?;
        self.layers.push(Layer::batch_norm(spec.out_channels)?);
        Ok(self)
    }

    fn push(&mut self, layer: Layer) -> &mut Self {
        self.layers.push(layer);
        self
    }

    fn head(&mut self, features: usize) -> Result<Vec<Layer>> {
        self.layers.push(Layer::global_avg_pool());
        self.layers.push(Layer::linear(features, CLASSES, self.rng)?);
        Ok(std::mem::take(&mut self.layers))
    }
}

fn conv3(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 3).padding(1)
}

fn dw3(c: usize, stride: usize) -> ConvSpec {
    ConvSpec::depthwise(c, 3).padding(1).stride(stride)
}

/// Depthwise stem of MobileNetV2 followed by ShuffleNet-style grouped
/// pointwise convolutions with channel shuffles, a group-recombination stage,
/// global pooling and a linear classifier.
fn msnet(rng: &mut Rng) -> Result<Vec<Layer>> {
    const G: usize = 4;
    let mut s = Stack::new(rng);
    s.conv_bn(conv3(3, 16).stride(2))?.push(Layer::relu6());
    s.conv_bn(dw3(16, 1))?.push(Layer::relu6());
    s.conv_bn(ConvSpec::pointwise(16, 32))?.push(Layer::relu6());
    s.conv_bn(dw3(32, 2))?.push(Layer::relu6());
    s.conv_bn(ConvSpec::pointwise(32, 64))?.push(Layer::relu6());
    s.conv_bn(ConvSpec::pointwise(64, 64).groups(G))?.push(Layer::shuffle(G)?);
    s.conv_bn(dw3(64, 2))?;
    s.conv_bn(ConvSpec::pointwise(64, 128).groups(G))?.push(Layer::relu6()).push(Layer::shuffle(G)?);
    let recombine = Layer::recombine(128, G, 128, s.rng)?;
    s.push(recombine);
    s.head(128)
}

/// Three conv → BN → ReLU → 2×2 max-pool stages.
fn simple_cnn(rng: &mut Rng) -> Result<Vec<Layer>> {
    let mut s = Stack::new(rng);
    for (cin, cout) in [(3, 32), (32, 64), (64, 128)] {
        s.conv_bn(conv3(cin, cout))?.push(Layer::relu()).push(Layer::max_pool());
    }
    s.head(128)
}

/// Inverted bottleneck without the residual add: expand 1×1 → depthwise 3×3 →
/// linear 1×1 projection.
fn inverted_bottleneck(s: &mut Stack<'_>, cin: usize, cout: usize, expand: usize, stride: usize) -> Result<()> {
    let hidden = cin * expand;
    if expand != 1 {
        s.conv_bn(ConvSpec::pointwise(cin, hidden))?.push(Layer::relu6());
    }
    s.conv_bn(dw3(hidden, stride))?.push(Layer::relu6());
    s.conv_bn(ConvSpec::pointwise(hidden, cout))?;
    Ok(())
}

fn mobilenet_v2_lite(rng: &mut Rng) -> Result<Vec<Layer>> {
    let mut s = Stack::new(rng);
    s.conv_bn(conv3(3, 16).stride(2))?.push(Layer::relu6());
    inverted_bottleneck(&mut s, 16, 16, 1, 1)?;
    inverted_bottleneck(&mut s, 16, 24, 4, 2)?;
    inverted_bottleneck(&mut s, 24, 32, 4, 2)?;
    inverted_bottleneck(&mut s, 32, 48, 4, 1)?;
    inverted_bottleneck(&mut s, 48, 64, 4, 1)?;
    s.conv_bn(ConvSpec::pointwise(64, 128))?.push(Layer::relu6());
    s.head(128)
}

/// ShuffleNet unit without the shortcut: grouped 1×1 → shuffle → depthwise
/// 3×3 → grouped 1×1.
fn shuffle_unit(s: &mut Stack<'_>, cin: usize, cout: usize, groups: usize, stride: usize) -> Result<()> {
    let hidden = cout / 2;
    s.conv_bn(ConvSpec::pointwise(cin, hidden).groups(groups))?.push(Layer::relu()).push(Layer::shuffle(groups)?);
    s.conv_bn(dw3(hidden, stride))?;
    s.conv_bn(ConvSpec::pointwise(hidden, cout).groups(groups))?.push(Layer::relu());
    Ok(())
}

fn shufflenet_lite(rng: &mut Rng) -> Result<Vec<Layer>> {
    const G: usize = 4;
    let mut s = Stack::new(rng);
    s.conv_bn(conv3(3, 24).stride(2))?.push(Layer::relu());
    shuffle_unit(&mut s, 24, 96, G, 2)?;
    shuffle_unit(&mut s, 96, 96, G, 1)?;
    shuffle_unit(&mut s, 96, 192, G, 2)?;
    for _ in 0..3 {
        shuffle_unit(&mut s, 192, 192, G, 1)?;
    }
    s.head(192)
}
