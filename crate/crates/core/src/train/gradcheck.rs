//! Backward pass against central finite differences.

use super::backward::{backward, Gradients};
use super::loss::loss_softmax_ce;
use crate::error::Result;
use crate::forward::forward_layered;
use crate::linalg::Vector;
use crate::net::{Activation, Network};
use crate::par;

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor, so parameters with (near) zero gradient are judged
/// on absolute error instead of amplifying rounding noise.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Step shrinks applied when a ReLU changes sign inside `[p - h, p + h]`.
const KINK_RETRIES: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRef {
    pub layer: usize,
    pub index: usize,
    pub is_bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamRef>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub params_checked: usize,
    /// Parameters whose step had to shrink to stay off a ReLU kink.
    pub kink_retries: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn sample_loss(net: &Network, x: &[f64], label: usize) -> Result<f64> {
    let logits = forward_layered(net, x, false)?.0;
    Ok(loss_softmax_ce(&logits, label)?.0)
}

/// Signs of every ReLU pre-activation.
fn relu_pattern(net: &Network, x: &[f64]) -> Result<Vec<bool>> {
    let trace = forward_layered(net, x, true)?.1.expect("trace requested");
    Ok(net
        .layers
        .iter()
        .zip(&trace.pre)
        .filter(|(l, _)| l.activation == Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect())
}

fn perturbed(net: &Network, p: ParamRef, value: f64) -> Network {
    let mut n = net.clone();
    let l = &mut n.layers[p.layer - 1];
    let mut w = l.weights().to_vec();
    let mut b = l.bias().to_vec();
    if p.is_bias {
        b[p.index] = value;
    } else {
        w[p.index] = value;
    }
    l.set_params(&w, &b).expect("same sizes");
    n
}

/// Central difference of the loss in one parameter, shrinking the step if
/// the perturbation would cross a ReLU kink. Returns the estimate and
/// whether the step had to shrink.
fn numeric_partial(net: &Network, x: &[f64], label: usize, p: ParamRef, base: &[bool]) -> Result<(f64, bool)> {
    let layer = net.layer(p.layer);
    let v = if p.is_bias { layer.bias()[p.index] } else { layer.weights()[p.index] };
    let mut h = FD_STEP;
    let nonlinear = !base.is_empty();
    for attempt in 0..=KINK_RETRIES {
        let up = perturbed(net, p, v + h);
        let down = perturbed(net, p, v - h);
        let smooth = !nonlinear || (relu_pattern(&up, x)? == base && relu_pattern(&down, x)? == base);
        if smooth || attempt == KINK_RETRIES {
            let fd = (sample_loss(&up, x, label)? - sample_loss(&down, x, label)?) / (2.0 * h);
            return Ok((fd, attempt > 0));
        }
        h /= 10.0;
    }
    unreachable!("loop returns on the last attempt")
}

/// Compare `backward` with central differences on every parameter.
pub fn gradcheck(net: &Network, samples: &[(Vector, usize)]) -> Result<GradCheckReport> {
    gradcheck_with(net, samples, |_| {})
}

/// As [`gradcheck`], with a hook that may alter the analytic gradients
/// before comparison.
pub fn gradcheck_with<F>(net: &Network, samples: &[(Vector, usize)], tamper: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Gradients),
{
    let params: Vec<ParamRef> = net
        .layers
        .iter()
        .flat_map(|l| {
            let layer = l.index;
            (0..l.weights().len())
                .map(move |index| ParamRef {
                    layer,
                    index,
                    is_bias: false,
                })
                .chain((0..l.bias().len()).map(move |index| ParamRef {
                    layer,
                    index,
                    is_bias: true,
                }))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        params_checked: 0,
        kink_retries: 0,
    };
    for (x, label) in samples {
        let (logits, trace) = forward_layered(net, x, true)?;
        let (_, dlogits) = loss_softmax_ce(&logits, *label)?;
        let mut grads = backward(net, &trace.expect("trace requested"), &dlogits)?;
        tamper(&mut grads);
        let base = relu_pattern(net, x)?;

        let numeric = par::map_slice(&params, |&p| numeric_partial(net, x, *label, p, &base));
        for (p, fd) in params.iter().zip(numeric) {
            let (fd, retried) = fd?;
            let lg = &grads.layers[p.layer - 1];
            let a = if p.is_bias { lg.bias[p.index] } else { lg.weights[p.index] };
            let err = relative_error(a, fd);
            report.params_checked += 1;
            report.kink_retries += usize::from(retried);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(*p);
                report.analytic_at_worst = a;
                report.numeric_at_worst = fd;
            }
        }
    }
    Ok(report)
}
