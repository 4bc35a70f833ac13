//! Exact reduction of linear networks to one affine map.

use crate::error::{Error, Result};
use crate::forward::{is_pass_through, run_layers};
use crate::linalg::{sparse_scale_add, spmm, AffineMap, SparseMatrix, Vector};
use crate::net::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseResult {
    pub map: AffineMap,
    pub source_layer_count: usize,
    pub flop_count_layered: usize,
    pub flop_count_collapsed: usize,
}

fn ensure_linear(net: &Network) -> Result<()> {
    match net.first_nonlinear() {
        Some(layer) => Err(Error::CannotCollapseNonlinear { layer }),
        None => Ok(()),
    }
}

/// Product of the feed-forward chain, accumulated from the classifier down.
/// Only defined when every layer reads its predecessor alone.
pub fn collapse_closed_form(net: &Network) -> Result<AffineMap> {
    ensure_linear(net)?;
    net.ensure_valid()?;
    if !net.skips.all_weight_on_diagonal() {
        return Err(Error::NotFeedForward);
    }
    let depth = net.depth();
    let top = net.layer(depth);
    let mut suffix = top.operator().to_sparse();
    let mut bias = top.bias_vector();
    for i in (1..depth).rev() {
        let layer = net.layer(i);
        bias.axpy(1.0, &suffix.spmv(&layer.bias_vector())?)?;
        suffix = spmm(&suffix, &layer.operator().to_sparse())?;
    }
    AffineMap::new(suffix.to_dense(), bias)
}

/// Linear part of layers `1..=upto`, propagated as sparse matrices.
fn homogeneous_part(net: &Network, upto: usize) -> Result<SparseMatrix> {
    // last layer that reads each W_acc(k), so it can be dropped afterwards
    let mut last_use = vec![0usize; upto + 1];
    for i in 1..=upto {
        for &(k, _) in net.skips.row(i) {
            last_use[k] = last_use[k].max(i);
        }
    }
    let mut acc: Vec<Option<SparseMatrix>> = vec![None; upto + 1];
    acc[0] = Some(SparseMatrix::identity(net.input_len()));

    for i in 1..=upto {
        let op = net.layer(i).operator().to_sparse();
        let next = if is_pass_through(net, i) {
            spmm(&op, acc[i - 1].as_ref().expect("memoized source"))?
        } else {
            let mut mixed = SparseMatrix::zeros(net.layer(i).in_shape.len(), net.input_len());
            for &(k, t) in net.skips.row(i) {
                let src = acc[k].as_ref().expect("memoized source");
                let r = net
                    .resamplers
                    .get(k, i)
                    .expect("validated network has every resampler");
                mixed = if r.is_identity() {
                    sparse_scale_add(1.0, &mixed, t, src)?
                } else {
                    sparse_scale_add(1.0, &mixed, t, &spmm(r.matrix(), src)?)?
                };
            }
            spmm(&op, &mixed)?
        };
        for k in 0..i {
            if last_use[k] <= i {
                acc[k] = None;
            }
        }
        acc[i] = Some(next);
    }
    Ok(acc[upto].take().expect("just computed"))
}

fn collapse_upto(net: &Network, upto: usize) -> Result<AffineMap> {
    ensure_linear(net)?;
    net.ensure_valid()?;
    let weight = homogeneous_part(net, upto)?;
    let (bias, _) = run_layers(net, &vec![0.0; net.input_len()], upto, false)?;
    AffineMap::new(weight.to_dense(), bias)
}

/// Collapse any linear network, whatever its skip topology: the linear part
/// is the network's action on the identity with biases off, the offset is
/// its output on the zero input.
pub fn collapse_network(net: &Network) -> Result<CollapseResult> {
    let map = collapse_upto(net, net.depth())?;
    Ok(CollapseResult {
        flop_count_layered: flops_layered(net),
        flop_count_collapsed: map.flops(),
        source_layer_count: net.depth(),
        map,
    })
}

/// The collapsed map of everything below the classifier.
pub fn collapse_latent(net: &Network) -> Result<AffineMap> {
    if net.depth() < 2 {
        return Err(Error::Config("latent map needs at least two layers".into()));
    }
    collapse_upto(net, net.depth() - 1)
}

/// Multiply-adds of one layered evaluation: nonzero operator entries, bias
/// adds, and for every layer that does not simply read its predecessor,
/// the resampling nonzeros and the weighted accumulation of each source.
pub fn flops_layered(net: &Network) -> usize {
    let mut total = 0;
    for i in 1..=net.depth() {
        let layer = net.layer(i);
        total += layer.operator().nonzeros() + layer.out_shape.len();
        if is_pass_through(net, i) {
            continue;
        }
        let len = layer.in_shape.len();
        for &(k, _) in net.skips.row(i) {
            total += len;
            if let Some(r) = net.resamplers.get(k, i) {
                if !r.is_identity() {
                    total += r.matrix().nnz();
                }
            }
        }
    }
    total
}

/// Bias vector `f(0)`; exposed for diagnostics.
pub fn zero_response(net: &Network) -> Result<Vector> {
    Ok(run_layers(net, &vec![0.0; net.input_len()], net.depth(), false)?.0)
}
