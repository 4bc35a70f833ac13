use crate::error::{Error, Result};
use crate::forward::ForwardTrace;
use crate::net::{Activation, Network};

/// Gradient of one layer's parameters, laid out like the layer's own.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients of every layer, `layers[i - 1]` for layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights().len()],
                    bias: vec![0.0; l.bias().len()],
                })
                .collect(),
        }
    }

    /// Flattened in [`Network::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reverse-mode gradients of a scalar loss whose logit gradient is
/// `dlogits`. Skip strengths and resampling matrices are constants.
pub fn backward(net: &Network, trace: &ForwardTrace, dlogits: &[f64]) -> Result<Gradients> {
    let depth = net.depth();
    if trace.depth() != depth || trace.mixed.len() != depth || trace.pre.len() != depth {
        return Err(Error::Trace(format!(
            "trace covers {} layers, network has {depth}",
            trace.depth()
        )));
    }
    for i in 1..=depth {
        let l = net.layer(i);
        if trace.mixed[i - 1].len() != l.in_shape.len() || trace.pre[i - 1].len() != l.out_shape.len() {
            return Err(Error::Trace(format!("trace shapes do not match layer {i}")));
        }
    }
    if dlogits.len() != trace.logits().len() {
        return Err(Error::dim("backward dlogits", trace.logits().len(), dlogits.len()));
    }

    let mut grads = Gradients::zeros_like(net);
    // gradient with respect to each x(k); x(0) is the input and needs none
    let mut gx: Vec<Vec<f64>> = (0..=depth).map(|k| vec![0.0; if k == 0 { 0 } else { trace.outputs[k].len() }]).collect();
    gx[depth].copy_from_slice(dlogits);

    for i in (1..=depth).rev() {
        let layer = net.layer(i);
        let mut gz = std::mem::take(&mut gx[i]);
        if layer.activation == Activation::Relu {
            for (g, &z) in gz.iter_mut().zip(trace.pre[i - 1].iter()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let lg = &mut grads.layers[i - 1];
        let group = layer.bias_group();
        for (r, &g) in gz.iter().enumerate() {
            lg.bias[r / group] += g;
        }
        let mut gm = vec![0.0; layer.in_shape.len()];
        layer.operator().backprop(&gz, &trace.mixed[i - 1], &mut lg.weights, &mut gm);

        for &(k, t) in net.skips.row(i) {
            if k == 0 {
                continue;
            }
            let r = net
                .resamplers
                .get(k, i)
                .ok_or_else(|| Error::Trace(format!("no resampler for skip {k} -> {i}")))?;
            if r.is_identity() {
                for (a, b) in gx[k].iter_mut().zip(&gm) {
                    *a += t * b;
                }
            } else {
                r.matrix().transpose_spmv_acc(&gm, t, &mut gx[k]);
            }
        }
    }
    Ok(grads)
}
