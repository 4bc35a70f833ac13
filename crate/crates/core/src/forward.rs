//! Layer-by-layer and collapsed evaluation.

use crate::error::{Error, Result};
use crate::linalg::{apply_affine, AffineMap, Vector};
use crate::net::{Activation, Network};
use crate::par;

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `mixed[i - 1]` is layer `i`'s mixed input `m(i)`.
    pub mixed: Vec<Vector>,
    /// `pre[i - 1]` is layer `i`'s pre-activation `z(i)`.
    pub pre: Vec<Vector>,
    /// `outputs[k]` is `x(k)`; `outputs[0]` is the input.
    pub outputs: Vec<Vector>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Vector {
        self.outputs.last().expect("trace holds at least the input")
    }

    pub fn depth(&self) -> usize {
        self.outputs.len().saturating_sub(1)
    }
}

/// True when layer `i` reads `x(i-1)` unchanged.
pub(crate) fn is_pass_through(net: &Network, i: usize) -> bool {
    matches!(net.skips.row(i), [(k, t)] if *k + 1 == i && *t == 1.0)
        && net.resamplers.get(i - 1, i).is_some_and(|r| r.is_identity())
}

/// Mixed input of layer `i` from the outputs computed so far.
pub(crate) fn mix_into(net: &Network, i: usize, outputs: &[Vector], m: &mut [f64]) -> Result<()> {
    for &(k, t) in net.skips.row(i) {
        let r = net
            .resamplers
            .get(k, i)
            .ok_or_else(|| Error::Validation(vec![crate::net::Violation::MissingResampler { from: k, to: i }]))?;
        let src = &outputs[k];
        if r.is_identity() {
            for (a, b) in m.iter_mut().zip(src.iter()) {
                *a += t * b;
            }
        } else {
            r.matrix().spmv_acc(src, t, m);
        }
    }
    Ok(())
}

/// Evaluate layers `1..=upto` on `x`, optionally keeping the trace.
pub(crate) fn run_layers(
    net: &Network,
    x: &[f64],
    upto: usize,
    keep_trace: bool,
) -> Result<(Vector, Option<ForwardTrace>)> {
    if x.len() != net.input_len() {
        return Err(Error::dim("forward_layered", net.input_len(), x.len()));
    }
    if net.skips.layers() < upto {
        return Err(Error::Validation(net.validate()));
    }
    let mut outputs: Vec<Vector> = Vec::with_capacity(upto + 1);
    outputs.push(Vector::new(x.to_vec()));
    let mut mixed = Vec::new();
    let mut pre = Vec::new();

    for i in 1..=upto {
        let layer = net.layer(i);
        let mut out = Vector::zeros(layer.out_shape.len());
        if is_pass_through(net, i) {
            let m = &outputs[i - 1];
            layer.operator().apply_biased(m, layer.bias(), layer.bias_group(), &mut out);
            if keep_trace {
                mixed.push(m.clone());
            }
        } else {
            let mut m = Vector::zeros(layer.in_shape.len());
            mix_into(net, i, &outputs, &mut m)?;
            layer.operator().apply_biased(&m, layer.bias(), layer.bias_group(), &mut out);
            if keep_trace {
                mixed.push(m);
            }
        }
        if keep_trace {
            pre.push(out.clone());
        }
        if layer.activation == Activation::Relu {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        outputs.push(out);
    }

    if keep_trace {
        let logits = outputs[upto].clone();
        Ok((
            logits,
            Some(ForwardTrace {
                mixed,
                pre,
                outputs,
            }),
        ))
    } else {
        Ok((outputs.pop().expect("at least the input"), None))
    }
}

/// Evaluate the network one layer at a time. Returns the logits (no
/// softmax) and, if asked, the trace for backpropagation.
pub fn forward_layered(net: &Network, x: &[f64], keep_trace: bool) -> Result<(Vector, Option<ForwardTrace>)> {
    run_layers(net, x, net.depth(), keep_trace)
}

/// `(1 - t) x_seq + t x_skip`
pub fn homotopy_mix(x_seq: &[f64], x_skip: &[f64], t: f64) -> Result<Vector> {
    if x_seq.len() != x_skip.len() {
        return Err(Error::dim("homotopy_mix", x_seq.len(), x_skip.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("homotopy t = {t} outside [0, 1]")));
    }
    Ok(x_seq.iter().zip(x_skip).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

pub fn forward_collapsed(map: &AffineMap, x: &[f64]) -> Result<Vector> {
    apply_affine(map, x)
}

/// Argmax, lowest index on ties.
pub fn predict_class(logits: &[f64]) -> usize {
    let mut best = 0;
    for (n, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = n;
        }
    }
    best
}

/// Anything that maps an unraveled input to logits.
pub trait Predictor: Sync {
    fn input_len(&self) -> usize;
    fn logits(&self, x: &[f64]) -> Result<Vector>;
    /// Multiply-adds per prediction.
    fn flops(&self) -> usize;
}

impl Predictor for Network {
    fn input_len(&self) -> usize {
        Network::input_len(self)
    }

    fn logits(&self, x: &[f64]) -> Result<Vector> {
        Ok(forward_layered(self, x, false)?.0)
    }

    fn flops(&self) -> usize {
        crate::collapse::flops_layered(self)
    }
}

impl Predictor for AffineMap {
    fn input_len(&self) -> usize {
        AffineMap::input_len(self)
    }

    fn logits(&self, x: &[f64]) -> Result<Vector> {
        apply_affine(self, x)
    }

    fn flops(&self) -> usize {
        AffineMap::flops(self)
    }
}

/// Class predictions for many inputs; parallel over samples when enabled.
/// Each result depends only on its own input.
pub fn predict_batch<P: Predictor + ?Sized>(model: &P, inputs: &[Vector]) -> Result<Vec<usize>> {
    par::map_slice(inputs, |x| model.logits(x).map(|l| predict_class(&l)))
        .into_iter()
        .collect()
}

/// Fraction of `inputs` classified as `labels`.
pub fn accuracy<P: Predictor + ?Sized>(model: &P, inputs: &[Vector], labels: &[usize]) -> Result<f64> {
    if inputs.len() != labels.len() {
        return Err(Error::dim("accuracy", inputs.len(), labels.len()));
    }
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_batch(model, inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / inputs.len() as f64)
}
