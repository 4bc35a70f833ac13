use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};

/// `x -> W x + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    weight: DenseMatrix,
    bias: Vector,
}

impl AffineMap {
    pub fn new(weight: DenseMatrix, bias: Vector) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::dim("AffineMap::new", weight.rows(), bias.len()));
        }
        if !bias.is_finite() {
            return Err(Error::NonFinite("AffineMap::new"));
        }
        Ok(AffineMap { weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        AffineMap {
            weight: DenseMatrix::identity(n),
            bias: Vector::zeros(n),
        }
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn input_len(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_len(&self) -> usize {
        self.weight.rows()
    }

    /// Multiply-adds for one application: `rows * cols + rows`.
    pub fn flops(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.weight.rows()
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &AffineMap) -> Result<AffineMap> {
        let weight = outer.weight.matmul(&self.weight)?;
        let mut bias = outer.weight.matvec(&self.bias)?;
        bias.axpy(1.0, &outer.bias)?;
        AffineMap::new(weight, bias)
    }
}

/// `W x + B`.
pub fn apply_affine(f: &AffineMap, x: &[f64]) -> Result<Vector> {
    if x.len() != f.weight.cols() {
        return Err(Error::dim("apply_affine", f.weight.cols(), x.len()));
    }
    let mut y = f.weight.matvec_unchecked(x);
    for (v, b) in y.iter_mut().zip(f.bias.iter()) {
        *v += b;
    }
    Ok(y)
}
