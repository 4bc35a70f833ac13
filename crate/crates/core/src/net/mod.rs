//! Linear CNNs with arbitrarily many weighted skip connections.
//!
//! Layer `i` (1-based) computes
//!
//! ```text
//! x(i) = act( W(i) P(i) Σ_k t(k, i-1) R(k, i-1) x(k) + B(i) )
//! ```
//!
//! with `x(0)` the unraveled input. The last layer is always the
//! fully-connected classifier.

mod layer;
mod presets;
mod skips;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use layer::{Activation, LayerKind, LayerNode, TiedSparse};
pub use presets::{preset, NetworkBuilder, Preset};
pub use skips::{ResampleBank, Resampler, SkipWeights};

use crate::error::{Error, Result};
use crate::layers::{resample_matrix, ResampleSpec, TensorShape};
use crate::linalg::SparseMatrix;

/// Row sums must hit 1 within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { layer: usize, sum: f64 },
    Shape { layer: usize, detail: String },
    DanglingSkip { from: usize, to: usize },
    MissingResampler { from: usize, to: usize },
    OutputClasses { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { layer, sum } => {
                write!(f, "skip weights into layer {layer} sum to {sum}, not 1")
            }
            Violation::Shape { layer, detail } => write!(f, "layer {layer}: {detail}"),
            Violation::DanglingSkip { from, to } => {
                write!(f, "skip {from} -> {to} does not point backwards to an existing layer")
            }
            Violation::MissingResampler { from, to } => {
                write!(f, "no resampling matrix for skip {from} -> {to}")
            }
            Violation::OutputClasses { expected, found } => {
                write!(f, "classifier outputs {found} values, expected {expected} classes")
            }
        }
    }
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in` for weights and biases. ReLU layers start
    /// with bias `+1/√fan_in` instead, so no channel begins dead.
    Uniform,
    /// Conv kernels start as a centred identity tap plus uniform noise of
    /// half-width `noise/√fan_in`; biases use the same scale. The classifier
    /// stays `Uniform`. Keeps deep linear stacks well-conditioned.
    NearIdentity { noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_shape: TensorShape,
    pub num_classes: usize,
    pub layers: Vec<LayerNode>,
    pub skips: SkipWeights,
    pub resamplers: ResampleBank,
}

impl Network {
    /// Assemble a network and build the resampling matrix of every stored
    /// skip entry.
    pub fn new(
        input_shape: TensorShape,
        num_classes: usize,
        layers: Vec<LayerNode>,
        skips: SkipWeights,
    ) -> Result<Self> {
        let mut net = Network {
            input_shape,
            num_classes,
            layers,
            skips,
            resamplers: ResampleBank::default(),
        };
        net.rebuild_resamplers()?;
        Ok(net)
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerNode {
        &self.layers[i - 1]
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    /// Shape of `x(k)`; `k = 0` is the input.
    pub fn output_shape(&self, k: usize) -> TensorShape {
        if k == 0 {
            self.input_shape
        } else {
            self.layers[k - 1].out_shape
        }
    }

    pub fn is_linear(&self) -> bool {
        self.layers.iter().all(|l| l.activation == Activation::None)
    }

    pub(crate) fn first_nonlinear(&self) -> Option<usize> {
        self.layers
            .iter()
            .find(|l| l.activation != Activation::None)
            .map(|l| l.index)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerNode::param_count).sum()
    }

    /// All parameters, layers ascending, each layer's weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights());
            out.extend_from_slice(l.bias());
        }
        out
    }

    /// Inverse of [`Network::params`].
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("Network::set_params", self.param_count(), params.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights().len();
            let nb = l.bias().len();
            let (w, b) = params[off..off + nw + nb].split_at(nw);
            l.set_params(w, b)?;
            off += nw + nb;
        }
        Ok(())
    }

    /// Fresh parameters from `init`, seeded.
    pub fn reinitialize(&self, init: Init, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = self.clone();
        for l in &mut net.layers {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            let near_identity = match (init, l.kind) {
                (Init::NearIdentity { noise }, LayerKind::Conv { kernel, .. }) => {
                    Some((noise * bound, kernel))
                }
                _ => None,
            };
            let (w, b) = match near_identity {
                Some((scale, kernel)) => {
                    let in_c = l.in_shape.channels;
                    let (kh, kw) = kernel;
                    let mut w: Vec<f64> = (0..l.weights().len())
                        .map(|_| rng.gen_range(-scale..=scale))
                        .collect();
                    for oc in 0..l.out_shape.channels {
                        let ic = oc % in_c;
                        w[((oc * in_c + ic) * kh + kh / 2) * kw + kw / 2] += 1.0;
                    }
                    let b = (0..l.bias().len()).map(|_| rng.gen_range(-scale..=scale)).collect();
                    (w, b)
                }
                None => {
                    let w = (0..l.weights().len()).map(|_| rng.gen_range(-bound..=bound)).collect();
                    let b = if l.activation == Activation::Relu {
                        vec![bound; l.bias().len()]
                    } else {
                        (0..l.bias().len()).map(|_| rng.gen_range(-bound..=bound)).collect()
                    };
                    (w, b)
                }
            };
            let w: Vec<f64> = w;
            let b: Vec<f64> = b;
            l.set_params(&w, &b).expect("same layer, same sizes");
        }
        net
    }

    /// Nearest-neighbour `R(k, i-1)` from `x(k)`'s shape to layer `i`'s
    /// input shape.
    pub fn auto_resampler(&self, k: usize, i: usize) -> Result<SparseMatrix> {
        if i == 0 || i > self.depth() || k >= i {
            return Err(Error::Range(format!(
                "resampler {k} -> {i} needs 0 <= k < i <= {}",
                self.depth()
            )));
        }
        let from = self.output_shape(k);
        let to = self.layer(i).in_shape;
        if from == to {
            return Ok(SparseMatrix::identity(from.len()));
        }
        if from.channels != to.channels {
            return Err(Error::Shape(format!(
                "skip {k} -> {i} changes channels {from} -> {to}; channel projection is not supported"
            )));
        }
        resample_matrix(&ResampleSpec::nearest(from, to))
    }

    /// Recompute every resampler from the layer shapes.
    pub fn rebuild_resamplers(&mut self) -> Result<()> {
        let mut bank = ResampleBank::default();
        for (k, i, _) in self.skips.entries() {
            bank.insert(k, i, self.auto_resampler(k, i)?);
        }
        self.resamplers = bank;
        Ok(())
    }

    /// Set every declared skip edge to a single strength `t`.
    ///
    /// A layer with `n` incoming skips gives each `t / n`, and its sequential
    /// input gets the remainder `1 - Σ`, so every row sums to one. Layers
    /// without skips get `t(i-1, i-1) = 1`.
    pub fn set_uniform_skip(&self, t: f64) -> Result<Network> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("skip strength t = {t} outside [0, 1]")));
        }
        let mut net = self.clone();
        let edges = self.skips.skip_edges();
        for i in 1..=self.depth() {
            let sources: Vec<usize> = edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
            let share = if sources.is_empty() {
                0.0
            } else {
                t / sources.len() as f64
            };
            let mut skip_total = 0.0;
            for &k in &sources {
                net.skips.set(k, i, share);
                skip_total += share;
            }
            net.skips.set(i - 1, i, 1.0 - skip_total);
        }
        if net.resamplers.len() != net.skips.entries().count() {
            net.rebuild_resamplers()?;
        }
        Ok(net)
    }

    /// Structural problems; empty means the network is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let depth = self.depth();
        if depth == 0 {
            out.push(Violation::Shape {
                layer: 0,
                detail: "network has no layers".into(),
            });
            return out;
        }

        for (n, l) in self.layers.iter().enumerate() {
            let i = n + 1;
            if l.index != i {
                out.push(Violation::Shape {
                    layer: i,
                    detail: format!("layer stored at position {i} has index {}", l.index),
                });
            }
            let expect_in = self.output_shape(i - 1);
            if l.in_shape != expect_in {
                out.push(Violation::Shape {
                    layer: i,
                    detail: format!("input shape {} but layer {} outputs {expect_in}", l.in_shape, i - 1),
                });
            }
            let op = l.operator();
            if op.cols() != l.in_shape.len() || op.rows() != l.out_shape.len() {
                out.push(Violation::Shape {
                    layer: i,
                    detail: format!(
                        "operator is {}x{}, shapes need {}x{}",
                        op.rows(),
                        op.cols(),
                        l.out_shape.len(),
                        l.in_shape.len()
                    ),
                });
            }
            let fc = !l.is_conv();
            if fc != (i == depth) {
                out.push(Violation::Shape {
                    layer: i,
                    detail: "only the last layer may (and must) be fully connected".into(),
                });
            }
        }

        let last = &self.layers[depth - 1];
        if last.out_shape.len() != self.num_classes {
            out.push(Violation::OutputClasses {
                expected: self.num_classes,
                found: last.out_shape.len(),
            });
        }

        if self.skips.layers() > depth {
            for i in depth + 1..=self.skips.layers() {
                for &(k, _) in self.skips.row(i) {
                    out.push(Violation::DanglingSkip { from: k, to: i });
                }
            }
        }
        for i in 1..=depth.min(self.skips.layers()) {
            let sum = self.skips.row_sum(i);
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                out.push(Violation::RowSum { layer: i, sum });
            }
            for &(k, _) in self.skips.row(i) {
                if k >= i {
                    out.push(Violation::DanglingSkip { from: k, to: i });
                    continue;
                }
                match self.resamplers.get(k, i) {
                    None => out.push(Violation::MissingResampler { from: k, to: i }),
                    Some(r) => {
                        let m = r.matrix();
                        let (rows, cols) = (self.layer(i).in_shape.len(), self.output_shape(k).len());
                        if m.rows() != rows || m.cols() != cols {
                            out.push(Violation::Shape {
                                layer: i,
                                detail: format!(
                                    "R({k},{}) is {}x{}, expected {rows}x{cols}",
                                    i - 1,
                                    m.rows(),
                                    m.cols()
                                ),
                            });
                        }
                    }
                }
            }
        }
        for i in self.skips.layers() + 1..=depth {
            out.push(Violation::RowSum { layer: i, sum: 0.0 });
        }
        out
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}
