use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    broadcast_channels, conv_output_shape, conv_taps, conv_to_matrix, pad_matrix, ConvSpec,
    PadSpec, TensorShape,
};
use crate::linalg::{SparseMatrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: PadSpec,
    },
    FullyConnected,
}

/// Sparse operator whose stored entries are tied to a parameter vector.
///
/// Each stored entry remembers which parameter it reads, so the structure
/// survives parameters that happen to be zero and gradients can be scattered
/// straight back onto the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedSparse {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    param_idx: Vec<usize>,
    values: Vec<f64>,
}

impl TiedSparse {
    /// `taps` must be sorted by row, then column.
    fn from_sorted_taps<I>(rows: usize, cols: usize, taps: I, params: &[f64]) -> Self
    where
        I: IntoIterator<Item = (usize, usize, usize)>,
    {
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::new();
        let mut param_idx = Vec::new();
        for (r, c, p) in taps {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            param_idx.push(p);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let values = param_idx.iter().map(|&p| params[p]).collect();
        TiedSparse {
            rows,
            cols,
            row_ptr,
            col_idx,
            param_idx,
            values,
        }
    }

    fn refresh(&mut self, params: &[f64]) {
        for (v, &p) in self.values.iter_mut().zip(&self.param_idx) {
            *v = params[p];
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Stored taps, including ones whose parameter is currently zero.
    pub fn taps(&self) -> usize {
        self.values.len()
    }

    pub fn nonzeros(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Canonical CSR copy (zero-valued taps dropped).
    pub fn to_sparse(&self) -> SparseMatrix {
        let t = (0..self.rows).flat_map(|r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |n| (r, self.col_idx[n], self.values[n]))
        });
        SparseMatrix::from_triplets(self.rows, self.cols, t.collect::<Vec<_>>())
            .expect("tied operator indices are in range")
    }

    /// `out[r] = Σ value·x[col] + bias[r / group]`
    pub(crate) fn apply_biased(&self, x: &[f64], bias: &[f64], group: usize, out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for n in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[n] * x[self.col_idx[n]];
            }
            *o = acc + bias[r / group];
        }
    }

    /// Accumulate `dparams[p] += gz[r]·x[c]` and `gx += Wᵀ gz`.
    pub(crate) fn backprop(&self, gz: &[f64], x: &[f64], dparams: &mut [f64], gx: &mut [f64]) {
        for (r, &g) in gz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for n in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[n];
                dparams[self.param_idx[n]] += g * x[c];
                gx[c] += g * self.values[n];
            }
        }
    }
}

/// One layer `x ↦ act(W P x + B)`. The padding is folded into the tied
/// operator; `weight_matrix` and `pad_matrix` rebuild the separate factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub index: usize,
    pub kind: LayerKind,
    /// Unpadded input shape (the mixed-input shape).
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub activation: Activation,
    in_channels: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    op: TiedSparse,
}

impl LayerNode {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        index: usize,
        in_shape: TensorShape,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: PadSpec,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Shape("kernel and stride dims must be >= 1".into()));
        }
        let padded = pad.apply(in_shape);
        let in_c = in_shape.channels;
        let out_shape = conv_output_shape(padded, in_c, out_channels, kernel, stride)?;
        let expected = out_channels * in_c * kernel.0 * kernel.1;
        if weights.len() != expected {
            return Err(Error::dim("conv layer weights", expected, weights.len()));
        }
        if bias.len() != out_channels {
            return Err(Error::dim("conv layer bias", out_channels, bias.len()));
        }
        // fold P into W: taps landing on the zero border vanish, the rest
        // are re-indexed onto the unpadded input
        let taps = conv_taps(padded, out_shape, kernel, stride).filter_map(|(r, c, p)| {
            let ch = c / padded.plane();
            let y = (c % padded.plane()) / padded.width;
            let x = c % padded.width;
            let inside = y >= pad.top
                && y < pad.top + in_shape.height
                && x >= pad.left
                && x < pad.left + in_shape.width;
            inside.then(|| (r, in_shape.index(ch, y - pad.top, x - pad.left), p))
        });
        let op = TiedSparse::from_sorted_taps(out_shape.len(), in_shape.len(), taps, &weights);
        Ok(LayerNode {
            index,
            kind: LayerKind::Conv { kernel, stride, pad },
            in_shape,
            out_shape,
            activation,
            in_channels: in_c,
            weights,
            bias,
            op,
        })
    }

    /// Dense classifier from the flattened `in_shape` to `classes` outputs;
    /// weights are row-major `classes × in_len`.
    pub fn fully_connected(
        index: usize,
        in_shape: TensorShape,
        classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let n = in_shape.len();
        let out_shape = TensorShape::new(classes, 1, 1)?;
        if weights.len() != classes * n {
            return Err(Error::dim("fc layer weights", classes * n, weights.len()));
        }
        if bias.len() != classes {
            return Err(Error::dim("fc layer bias", classes, bias.len()));
        }
        let taps = (0..classes).flat_map(|r| (0..n).map(move |c| (r, c, r * n + c)));
        let op = TiedSparse::from_sorted_taps(classes, n, taps, &weights);
        Ok(LayerNode {
            index,
            kind: LayerKind::FullyConnected,
            in_shape,
            out_shape,
            activation: Activation::None,
            in_channels: in_shape.channels,
            weights,
            bias,
            op,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-channel bias for conv layers, per-output for the classifier.
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Fan-in used for initialization scaling.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => self.in_channels * kernel.0 * kernel.1,
            LayerKind::FullyConnected => self.in_shape.len(),
        }
    }

    pub fn set_params(&mut self, weights: &[f64], bias: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::dim("set_params weights", self.weights.len(), weights.len()));
        }
        if bias.len() != self.bias.len() {
            return Err(Error::dim("set_params bias", self.bias.len(), bias.len()));
        }
        self.weights.copy_from_slice(weights);
        self.bias.copy_from_slice(bias);
        self.op.refresh(&self.weights);
        Ok(())
    }

    pub(crate) fn update_params(&mut self, f: impl Fn(&mut [f64], &mut [f64])) {
        f(&mut self.weights, &mut self.bias);
        self.op.refresh(&self.weights);
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    pub fn pad(&self) -> PadSpec {
        match self.kind {
            LayerKind::Conv { pad, .. } => pad,
            LayerKind::FullyConnected => PadSpec::default(),
        }
    }

    pub fn conv_spec(&self) -> Option<ConvSpec> {
        match self.kind {
            LayerKind::Conv { kernel, stride, .. } => Some(ConvSpec {
                in_channels: self.in_channels,
                out_channels: self.out_shape.channels,
                kernel_h: kernel.0,
                kernel_w: kernel.1,
                stride_h: stride.0,
                stride_w: stride.1,
                weights: self.weights.clone(),
                bias: self.bias.clone(),
            }),
            LayerKind::FullyConnected => None,
        }
    }

    /// `W^(i)`, acting on the padded input.
    pub fn weight_matrix(&self) -> SparseMatrix {
        match self.conv_spec() {
            Some(spec) => {
                conv_to_matrix(&spec, self.pad().apply(self.in_shape))
                    .expect("layer geometry validated at construction")
                    .0
            }
            None => self.op.to_sparse(),
        }
    }

    /// `P^(i)`; identity when the layer has no padding.
    pub fn pad_matrix(&self) -> SparseMatrix {
        pad_matrix(&self.pad(), self.in_shape).0
    }

    /// `B^(i)` broadcast to the full output length.
    pub fn bias_vector(&self) -> Vector {
        broadcast_channels(&self.bias, self.out_shape)
    }

    /// The fused `W^(i) P^(i)` operator.
    pub fn operator(&self) -> &TiedSparse {
        &self.op
    }

    pub(crate) fn bias_group(&self) -> usize {
        self.out_shape.plane()
    }

    /// `act(W P m + B)`, also returning the pre-activation.
    #[cfg(test)]
    pub(crate) fn apply(&self, mixed: &[f64]) -> (Vector, Vector) {
        let mut z = Vector::zeros(self.out_shape.len());
        self.op.apply_biased(mixed, &self.bias, self.bias_group(), &mut z);
        let x = match self.activation {
            Activation::None => z.clone(),
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        };
        (z, x)
    }
}
