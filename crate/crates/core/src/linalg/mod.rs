//! Dense and CSR sparse arithmetic in `f64`.

mod affine;
mod dense;
mod sparse;
mod vector;

pub use affine::{apply_affine, AffineMap};
pub use dense::DenseMatrix;
pub use sparse::{sparse_scale_add, spmm, SparseMatrix};
pub use vector::Vector;

/// Checked sparse mat-vec.
pub fn spmv(m: &SparseMatrix, x: &[f64]) -> crate::Result<Vector> {
    m.spmv(x)
}
