//! Compressed sparse row matrices.
//!
//! Every constructor produces canonical form: columns strictly increasing
//! within a row, duplicates summed, and exact `0.0` values dropped. Two
//! matrices with the same entries therefore have identical arrays, so
//! structural equality is plain `==`.

use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Rows per parallel task in `spmm`.
const SPMM_ROW_BLOCK: usize = 32;

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets in any order. Duplicates are
    /// summed in input order.
    pub fn from_triplets<I>(rows: usize, cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &t {
            if r >= rows {
                return Err(Error::dim("from_triplets row", rows, r));
            }
            if c >= cols {
                return Err(Error::dim("from_triplets col", cols, c));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("SparseMatrix::from_triplets"));
            }
        }
        // stable: duplicates keep their input order for summation
        t.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            i += 1;
            while i < t.len() && t[i].0 == r && t[i].1 == c {
                v += t[i].2;
                i += 1;
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Build from raw CSR arrays; the arrays are validated and then
    /// canonicalized.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(Error::dim("from_csr row_ptr", rows + 1, row_ptr.len()));
        }
        if col_idx.len() != values.len() {
            return Err(Error::dim("from_csr values", col_idx.len(), values.len()));
        }
        if row_ptr[0] != 0 || row_ptr[rows] != values.len() {
            return Err(Error::Format("row_ptr must start at 0 and end at nnz".into()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("row_ptr is not nondecreasing".into()));
        }
        let triplets = (0..rows).flat_map(|r| {
            (row_ptr[r]..row_ptr[r + 1]).map(move |n| (r, n))
        });
        let triplets: Vec<_> = triplets.map(|(r, n)| (r, col_idx[n], values[n])).collect();
        Self::from_triplets(rows, cols, triplets)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        SparseMatrix {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(n) => vals[n],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |n| (r, self.col_idx[n], self.values[n]))
        })
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && self.nnz() == self.rows
            && self.col_idx.iter().enumerate().all(|(r, &c)| r == c)
            && self.values.iter().all(|&v| v == 1.0)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            data[r * self.cols + c] = v;
        }
        DenseMatrix::new(self.rows, self.cols, data).expect("canonical CSR is finite")
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, t).expect("transpose of valid CSR")
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::dim("spmv", self.cols, x.len()));
        }
        let mut out = Vector::zeros(self.rows);
        self.spmv_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn spmv_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for n in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[n] * x[self.col_idx[n]];
            }
            *o = acc;
        }
    }

    /// `out += alpha * selfᵀ y`
    /// `out += alpha · A x`
    pub(crate) fn spmv_acc(&self, x: &[f64], alpha: f64, out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for n in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[n] * x[self.col_idx[n]];
            }
            *o += alpha * acc;
        }
    }

    pub(crate) fn transpose_spmv_acc(&self, y: &[f64], alpha: f64, out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate().take(self.rows) {
            let s = alpha * yr;
            if s == 0.0 {
                continue;
            }
            for n in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[n]] += self.values[n] * s;
            }
        }
    }

    pub fn spmm(&self, b: &SparseMatrix) -> Result<SparseMatrix> {
        spmm(self, b)
    }

    /// Serialize as `row col value` lines in row-major order.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }

    /// Parse the `row col value` format; dimensions are supplied by the caller.
    pub fn read_triplets<R: BufRead>(rows: usize, cols: usize, reader: R) -> Result<Self> {
        let mut t = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let bad = || Error::Format(format!("triplet line {}: {line:?}", lineno + 1));
            let r = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            t.push((r, c, v));
        }
        Self::from_triplets(rows, cols, t)
    }
}

/// Canonical CSR product `a * b`.
///
/// Rows are computed independently (in parallel when enabled); each output
/// entry accumulates `a[r,k] * b[k,c]` in increasing `k`, so the result does
/// not depend on the thread count.
pub fn spmm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    if a.cols != b.rows {
        return Err(Error::dim("spmm", a.cols, b.rows));
    }
    let blocks = a.rows.div_ceil(SPMM_ROW_BLOCK);
    let parts = par::map_range(blocks, |blk| {
        let lo = blk * SPMM_ROW_BLOCK;
        let hi = (lo + SPMM_ROW_BLOCK).min(a.rows);
        spmm_rows(a, b, lo..hi)
    });

    let nnz = parts.iter().map(|p| p.1.len()).sum();
    let mut row_ptr = Vec::with_capacity(a.rows + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for (counts, cols, vals) in parts {
        for n in counts {
            row_ptr.push(row_ptr.last().unwrap() + n);
        }
        col_idx.extend(cols);
        values.extend(vals);
    }
    Ok(SparseMatrix {
        rows: a.rows,
        cols: b.cols,
        row_ptr,
        col_idx,
        values,
    })
}

fn spmm_rows(
    a: &SparseMatrix,
    b: &SparseMatrix,
    rows: std::ops::Range<usize>,
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut acc = vec![0.0f64; b.cols];
    let mut seen = vec![false; b.cols];
    let mut touched: Vec<usize> = Vec::new();
    let mut counts = Vec::with_capacity(rows.len());
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in rows {
        touched.clear();
        let (a_cols, a_vals) = a.row(r);
        for (&k, &av) in a_cols.iter().zip(a_vals) {
            let (b_cols, b_vals) = b.row(k);
            for (&c, &bv) in b_cols.iter().zip(b_vals) {
                if !seen[c] {
                    seen[c] = true;
                    touched.push(c);
                }
                acc[c] += av * bv;
            }
        }
        touched.sort_unstable();
        let before = vals.len();
        for &c in &touched {
            let v = acc[c];
            if v != 0.0 {
                cols.push(c);
                vals.push(v);
            }
            acc[c] = 0.0;
            seen[c] = false;
        }
        counts.push(vals.len() - before);
    }
    (counts, cols, vals)
}

/// `alpha * a + beta * b` with exact zeros dropped.
pub fn sparse_scale_add(
    alpha: f64,
    a: &SparseMatrix,
    beta: f64,
    b: &SparseMatrix,
) -> Result<SparseMatrix> {
    if a.rows != b.rows {
        return Err(Error::dim("sparse_scale_add rows", a.rows, b.rows));
    }
    if a.cols != b.cols {
        return Err(Error::dim("sparse_scale_add cols", a.cols, b.cols));
    }
    let mut row_ptr = Vec::with_capacity(a.rows + 1);
    let mut col_idx = Vec::with_capacity(a.nnz().max(b.nnz()));
    let mut values = Vec::with_capacity(a.nnz().max(b.nnz()));
    row_ptr.push(0);
    for r in 0..a.rows {
        let (ac, av) = a.row(r);
        let (bc, bv) = b.row(r);
        let (mut i, mut j) = (0, 0);
        while i < ac.len() || j < bc.len() {
            let ca = ac.get(i).copied().unwrap_or(usize::MAX);
            let cb = bc.get(j).copied().unwrap_or(usize::MAX);
            let (c, v) = if ca == cb {
                i += 1;
                j += 1;
                (ca, alpha * av[i - 1] + beta * bv[j - 1])
            } else if ca < cb {
                i += 1;
                (ca, alpha * av[i - 1])
            } else {
                j += 1;
                (cb, beta * bv[j - 1])
            };
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
            }
        }
        row_ptr.push(values.len());
    }
    Ok(SparseMatrix {
        rows: a.rows,
        cols: a.cols,
        row_ptr,
        col_idx,
        values,
    })
}
