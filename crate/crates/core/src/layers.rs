//! Explicit sparse matrices for linear CNN layers.
//!
//! Images are unraveled channel-outermost, then row-major: flat index
//! `ch * h * w + y * w + x` holds pixel `(ch, y, x)`. Every builder here
//! emits matrices that act on vectors in that layout.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SparseMatrix, Vector};

/// `[channel][row][col]`
pub type Tensor3 = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "tensor dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        Ok(TensorShape {
            channels,
            height,
            width,
        })
    }

    /// Flattened length `c * h * w`.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, ch: usize, y: usize, x: usize) -> usize {
        ch * self.plane() + y * self.width + x
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

/// A 2-d convolution (cross-correlation, no kernel flip) with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// `[out_c][in_c][kernel_h][kernel_w]`
    pub weights: Vec<f64>,
    /// One value per output channel.
    pub bias: Vec<f64>,
}

impl ConvSpec {
    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_index(&self, oc: usize, ic: usize, dy: usize, dx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel_h + dy) * self.kernel_w + dx
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Shape("kernel dims must be >= 1".into()));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Shape("strides must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape("channel counts must be >= 1".into()));
        }
        if self.weights.len() != self.kernel_len() {
            return Err(Error::dim("ConvSpec weights", self.kernel_len(), self.weights.len()));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::dim("ConvSpec bias", self.out_channels, self.bias.len()));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape> {
        conv_output_shape(
            input,
            self.in_channels,
            self.out_channels,
            (self.kernel_h, self.kernel_w),
            (self.stride_h, self.stride_w),
        )
    }
}

pub(crate) fn conv_output_shape(
    input: TensorShape,
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<TensorShape> {
    if input.channels != in_channels {
        return Err(Error::Shape(format!(
            "conv expects {in_channels} input channels, input has {}",
            input.channels
        )));
    }
    if input.height < kernel.0 || input.width < kernel.1 {
        return Err(Error::Shape(format!(
            "kernel {}x{} larger than input {}x{}",
            kernel.0, kernel.1, input.height, input.width
        )));
    }
    TensorShape::new(
        out_channels,
        (input.height - kernel.0) / stride.0 + 1,
        (input.width - kernel.1) / stride.1 + 1,
    )
}

/// Enumerate the taps of a strided convolution as
/// `(output row, input column, kernel weight index)`, rows ascending and
/// columns ascending within a row.
pub(crate) fn conv_taps(
    input: TensorShape,
    output: TensorShape,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> impl Iterator<Item = (usize, usize, usize)> {
    let (kh, kw) = kernel;
    let in_c = input.channels;
    (0..output.channels).flat_map(move |oc| {
        (0..output.height).flat_map(move |y| {
            (0..output.width).flat_map(move |x| {
                let row = output.index(oc, y, x);
                (0..in_c).flat_map(move |ic| {
                    (0..kh).flat_map(move |dy| {
                        (0..kw).map(move |dx| {
                            let col = input.index(ic, y * stride.0 + dy, x * stride.1 + dx);
                            let widx = ((oc * in_c + ic) * kh + dy) * kw + dx;
                            (row, col, widx)
                        })
                    })
                })
            })
        })
    })
}

/// Zero-border padding, per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PadSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub fn uniform(n: usize) -> Self {
        PadSpec {
            top: n,
            bottom: n,
            left: n,
            right: n,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == PadSpec::default()
    }

    pub fn apply(&self, shape: TensorShape) -> TensorShape {
        TensorShape {
            channels: shape.channels,
            height: shape.height + self.top + self.bottom,
            width: shape.width + self.left + self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    #[default]
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleSpec {
    pub from: TensorShape,
    pub to: TensorShape,
    pub method: ResampleMethod,
}

impl ResampleSpec {
    pub fn nearest(from: TensorShape, to: TensorShape) -> Self {
        ResampleSpec {
            from,
            to,
            method: ResampleMethod::Nearest,
        }
    }
}

pub fn unravel(image: &Tensor3) -> Result<Vector> {
    let c = image.len();
    let h = image.first().map_or(0, Vec::len);
    let w = image.first().and_then(|p| p.first()).map_or(0, Vec::len);
    let shape = TensorShape::new(c, h, w)?;
    let mut out = Vec::with_capacity(shape.len());
    for plane in image {
        if plane.len() != h {
            return Err(Error::Shape("ragged tensor: plane heights differ".into()));
        }
        for row in plane {
            if row.len() != w {
                return Err(Error::Shape("ragged tensor: row widths differ".into()));
            }
            out.extend_from_slice(row);
        }
    }
    Ok(Vector::new(out))
}

pub fn ravel(x: &[f64], shape: TensorShape) -> Result<Tensor3> {
    if x.len() != shape.len() {
        return Err(Error::dim("ravel", shape.len(), x.len()));
    }
    Ok(x
        .chunks_exact(shape.plane())
        .map(|plane| plane.chunks_exact(shape.width).map(<[f64]>::to_vec).collect())
        .collect())
}

/// Toeplitz matrix of a convolution over an unraveled `in_shape` input.
pub fn conv_to_matrix(spec: &ConvSpec, in_shape: TensorShape) -> Result<(SparseMatrix, TensorShape)> {
    spec.validate()?;
    let out_shape = spec.output_shape(in_shape)?;
    let taps = conv_taps(
        in_shape,
        out_shape,
        (spec.kernel_h, spec.kernel_w),
        (spec.stride_h, spec.stride_w),
    );
    let m = SparseMatrix::from_triplets(
        out_shape.len(),
        in_shape.len(),
        taps.map(|(r, c, w)| (r, c, spec.weights[w])),
    )?;
    Ok((m, out_shape))
}

/// Per-channel bias broadcast to the full output length.
pub fn conv_bias_vector(spec: &ConvSpec, out_shape: TensorShape) -> Result<Vector> {
    if out_shape.channels != spec.out_channels || spec.bias.len() != spec.out_channels {
        return Err(Error::Shape(format!(
            "bias has {} channels, output shape {out_shape}",
            spec.bias.len()
        )));
    }
    Ok(broadcast_channels(&spec.bias, out_shape))
}

pub(crate) fn broadcast_channels(per_channel: &[f64], shape: TensorShape) -> Vector {
    per_channel
        .iter()
        .flat_map(|&b| std::iter::repeat_n(b, shape.plane()))
        .collect()
}

pub fn pad_matrix(spec: &PadSpec, in_shape: TensorShape) -> (SparseMatrix, TensorShape) {
    let out = spec.apply(in_shape);
    let triplets = (0..in_shape.channels).flat_map(|ch| {
        (0..in_shape.height).flat_map(move |y| {
            (0..in_shape.width).map(move |x| {
                (
                    out.index(ch, y + spec.top, x + spec.left),
                    in_shape.index(ch, y, x),
                    1.0,
                )
            })
        })
    });
    let m = SparseMatrix::from_triplets(out.len(), in_shape.len(), triplets)
        .expect("pad indices are in range");
    (m, out)
}

/// Center-aligned nearest-neighbour source index along one axis:
/// `min(floor((dst + 0.5) * src / dst_size), src - 1)`, in exact integer
/// arithmetic.
pub fn nearest_source(dst: usize, src_size: usize, dst_size: usize) -> usize {
    ((2 * dst + 1) * src_size / (2 * dst_size)).min(src_size - 1)
}

pub fn resample_matrix(spec: &ResampleSpec) -> Result<SparseMatrix> {
    let ResampleSpec { from, to, method } = *spec;
    match method {
        ResampleMethod::Nearest => {}
    }
    if from.channels != to.channels {
        return Err(Error::Shape(format!(
            "resample cannot change channel count: {from} -> {to}"
        )));
    }
    let triplets = (0..to.channels).flat_map(|ch| {
        (0..to.height).flat_map(move |y| {
            let sy = nearest_source(y, from.height, to.height);
            (0..to.width).map(move |x| {
                let sx = nearest_source(x, from.width, to.width);
                (to.index(ch, y, x), from.index(ch, sy, sx), 1.0)
            })
        })
    });
    SparseMatrix::from_triplets(to.len(), from.len(), triplets)
}

/// Padding that keeps a stride-1 convolution shape-preserving: `k - 1` in
/// total per axis, the extra pixel (for even `k`) going bottom/right.
pub fn same_pad_for_kernel(k1: usize, k2: usize) -> PadSpec {
    assert!(k1 >= 1 && k2 >= 1, "kernel dims must be >= 1");
    PadSpec {
        top: (k1 - 1) / 2,
        bottom: k1 / 2,
        left: (k2 - 1) / 2,
        right: k2 / 2,
    }
}

/// Write a matrix in the `row col value` triplet format.
pub fn export_matrix<W: Write>(m: &SparseMatrix, w: W) -> io::Result<()> {
    m.write_triplets(w)
}
