use std::fmt;
use std::str::FromStr;

use super::{Activation, Init, LayerNode, Network, SkipWeights};
use crate::error::{Error, Result};
use crate::layers::{same_pad_for_kernel, PadSpec, TensorShape};

/// Skip strength given to declared skips when a network is built.
pub const DEFAULT_SKIP_T: f64 = 0.5;

const MNIST_SIDE: usize = 28;
const MNIST_CLASSES: usize = 10;

struct ConvDecl {
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: PadSpec,
    activation: Activation,
}

/// Declarative network construction: conv layers in order, then the
/// classifier is appended automatically.
pub struct NetworkBuilder {
    input_shape: TensorShape,
    classes: usize,
    convs: Vec<ConvDecl>,
    skips: Vec<(usize, usize)>,
    skip_t: f64,
}

impl NetworkBuilder {
    pub fn new(input_shape: TensorShape, classes: usize) -> Self {
        NetworkBuilder {
            input_shape,
            classes,
            convs: Vec::new(),
            skips: Vec::new(),
            skip_t: DEFAULT_SKIP_T,
        }
    }

    pub fn conv(
        mut self,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: PadSpec,
        activation: Activation,
    ) -> Self {
        self.convs.push(ConvDecl {
            out_channels,
            kernel,
            stride,
            pad,
            activation,
        });
        self
    }

    /// Declare a skip feeding `x(from)` into the input of layer `to`.
    pub fn skip(mut self, from: usize, to: usize) -> Self {
        self.skips.push((from, to));
        self
    }

    pub fn skip_strength(mut self, t: f64) -> Self {
        self.skip_t = t;
        self
    }

    pub fn build(self, init: Init, seed: u64) -> Result<Network> {
        if self.classes == 0 {
            return Err(Error::Config("network needs at least one class".into()));
        }
        let mut layers = Vec::with_capacity(self.convs.len() + 1);
        let mut shape = self.input_shape;
        for (n, c) in self.convs.iter().enumerate() {
            let wlen = c.out_channels * shape.channels * c.kernel.0 * c.kernel.1;
            let layer = LayerNode::conv(
                n + 1,
                shape,
                c.out_channels,
                c.kernel,
                c.stride,
                c.pad,
                c.activation,
                vec![0.0; wlen],
                vec![0.0; c.out_channels],
            )?;
            shape = layer.out_shape;
            layers.push(layer);
        }
        let depth = layers.len() + 1;
        layers.push(LayerNode::fully_connected(
            depth,
            shape,
            self.classes,
            vec![0.0; self.classes * shape.len()],
            vec![0.0; self.classes],
        )?);

        let mut skips = SkipWeights::feed_forward(depth);
        for &(k, i) in &self.skips {
            if i == 0 || i > depth || k + 1 >= i {
                return Err(Error::Config(format!(
                    "skip {k} -> {i} must satisfy k + 1 < i <= {depth}"
                )));
            }
            skips.set(k, i, 0.0);
        }
        let net = Network::new(self.input_shape, self.classes, layers, skips)?
            .set_uniform_skip(self.skip_t)?
            .reinitialize(init, seed);
        net.ensure_valid()?;
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Three single-channel 3×3 convs and a classifier, one skip 1 → 3.
    Basic3,
    /// Six single-channel 3×3 convs and a classifier, skips between every
    /// non-consecutive pair of conv layers.
    Basic6,
    /// `L` shape-preserving 3×3 convs, two-layer residual blocks, no
    /// activations.
    DeepLinear(usize),
    /// `Basic3` with ReLU after every conv layer.
    MnistClassifier,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Basic3 => f.write_str("basic3"),
            Preset::Basic6 => f.write_str("basic6"),
            Preset::DeepLinear(l) => write!(f, "deep_linear({l})"),
            Preset::MnistClassifier => f.write_str("mnist_classifier"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// Accepts `basic3`, `basic6`, `mnist_classifier`, `deep_linear(L)` and
    /// `deep_linear:L`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unknown preset '{s}'"));
        match s {
            "basic3" => return Ok(Preset::Basic3),
            "basic6" => return Ok(Preset::Basic6),
            "mnist_classifier" => return Ok(Preset::MnistClassifier),
            _ => {}
        }
        let rest = s.strip_prefix("deep_linear").ok_or_else(bad)?;
        let digits = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| rest.strip_prefix(':'))
            .ok_or_else(bad)?;
        let l: usize = digits.trim().parse().map_err(|_| bad())?;
        if l == 0 {
            return Err(Error::Config("deep_linear needs at least one conv layer".into()));
        }
        Ok(Preset::DeepLinear(l))
    }
}

/// Build a preset for 1×28×28 inputs and 10 classes with seeded parameters.
pub fn preset(p: Preset, seed: u64) -> Result<Network> {
    let input = TensorShape::new(1, MNIST_SIDE, MNIST_SIDE)?;
    let k3 = (3, 3);
    let s1 = (1, 1);
    let valid = PadSpec::default();
    let same = same_pad_for_kernel(3, 3);
    let b = NetworkBuilder::new(input, MNIST_CLASSES);
    match p {
        Preset::Basic3 | Preset::MnistClassifier => {
            let act = if p == Preset::Basic3 {
                Activation::None
            } else {
                Activation::Relu
            };
            b.conv(1, k3, s1, valid, act)
                .conv(1, k3, s1, valid, act)
                .conv(1, k3, s1, same, act)
                .skip(1, 3)
                .build(Init::Uniform, seed)
        }
        Preset::Basic6 => {
            let mut b = b;
            for _ in 0..6 {
                b = b.conv(1, k3, s1, valid, Activation::None);
            }
            for j in 1..=4 {
                for i in j + 2..=6 {
                    b = b.skip(j, i);
                }
            }
            b.build(Init::Uniform, seed)
        }
        Preset::DeepLinear(l) => {
            if l == 0 {
                return Err(Error::Config("deep_linear needs at least one conv layer".into()));
            }
            let mut b = b;
            for _ in 0..l {
                b = b.conv(1, k3, s1, same, Activation::None);
            }
            // block of layers (i-2, i-1) is bypassed by x(i-3)
            for i in (3..=l).step_by(2) {
                b = b.skip(i - 3, i);
            }
            b.build(Init::NearIdentity { noise: 0.1 }, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("basic3".parse::<Preset>().unwrap(), Preset::Basic3);
        assert_eq!("deep_linear(34)".parse::<Preset>().unwrap(), Preset::DeepLinear(34));
        assert_eq!("deep_linear:5".parse::<Preset>().unwrap(), Preset::DeepLinear(5));
        for bad in ["basic4", "deep_linear", "deep_linear(0)", "deep_linear(x)", ""] {
            assert!(matches!(bad.parse::<Preset>(), Err(Error::Config(_))), "{bad}");
        }
        for p in [Preset::Basic3, Preset::Basic6, Preset::DeepLinear(7), Preset::MnistClassifier] {
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn shapes() {
        let net = preset(Preset::Basic3, 0).unwrap();
        let sides: Vec<_> = net.layers.iter().map(|l| l.out_shape.height).collect();
        assert_eq!(sides, vec![26, 24, 24, 1]);
        assert_eq!(net.layer(4).in_shape.len(), 576);

        let net = preset(Preset::Basic6, 0).unwrap();
        let sides: Vec<_> = net.layers.iter().map(|l| l.out_shape.height).collect();
        assert_eq!(sides, vec![26, 24, 22, 20, 18, 16, 1]);

        let net = preset(Preset::DeepLinear(5), 0).unwrap();
        assert_eq!(net.depth(), 6);
        assert!(net.layers[..5].iter().all(|l| l.out_shape == net.input_shape));
        assert_eq!(net.skips.skip_edges(), vec![(0, 3), (2, 5)]);
        assert!(net.is_linear());
    }

    #[test]
    fn mnist_classifier_is_basic3_with_relu() {
        let a = preset(Preset::Basic3, 3).unwrap();
        let b = preset(Preset::MnistClassifier, 3).unwrap();
        assert_eq!(a.skips, b.skips);
        assert_eq!(a.param_count(), b.param_count());
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!((la.kind, la.in_shape, la.out_shape), (lb.kind, lb.in_shape, lb.out_shape));
        }
        // relu layers start with a live positive bias
        assert!(b.layers[..3].iter().all(|l| l.bias() == [1.0 / 3.0]));
        assert!(b.layers[..3].iter().all(|l| l.activation == Activation::Relu));
        assert_eq!(b.layers[3].activation, Activation::None);
    }

    #[test]
    fn builder_rejects_bad_skips() {
        let shape = TensorShape::new(1, 5, 5).unwrap();
        let b = || NetworkBuilder::new(shape, 2).conv(1, (3, 3), (1, 1), PadSpec::uniform(1), Activation::None);
        assert!(b().skip(0, 1).build(Init::Uniform, 0).is_err());
        assert!(b().skip(0, 3).build(Init::Uniform, 0).is_err());
        assert!(b().skip(0, 2).build(Init::Uniform, 0).is_ok());
    }
}
