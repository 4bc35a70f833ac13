use std::collections::BTreeMap;

use crate::linalg::SparseMatrix;

/// Mixing coefficients `t(k, i-1)`: how much of layer `k`'s output feeds the
/// input of layer `i`. Stored per destination row; absent entries are zero.
/// An entry stored with value `0.0` is still part of the topology (its
/// mixing work is still performed at evaluation time).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkipWeights {
    /// `rows[i - 1]` holds `(k, t)` for layer `i`, ascending in `k`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl SkipWeights {
    /// Plain feed-forward weights for `layers` layers.
    pub fn feed_forward(layers: usize) -> Self {
        SkipWeights {
            rows: (1..=layers).map(|i| vec![(i - 1, 1.0)]).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    /// Entries feeding layer `i` (1-based).
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i - 1]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.rows
            .get(i.wrapping_sub(1))
            .and_then(|row| row.iter().find(|e| e.0 == k))
            .map_or(0.0, |e| e.1)
    }

    /// Insert or overwrite `t(k, i-1)`. Grows the row table if needed.
    pub fn set(&mut self, k: usize, i: usize, t: f64) {
        assert!(i >= 1, "destination layers are 1-based");
        if self.rows.len() < i {
            self.rows.resize(i, Vec::new());
        }
        let row = &mut self.rows[i - 1];
        match row.binary_search_by_key(&k, |e| e.0) {
            Ok(n) => row[n].1 = t,
            Err(n) => row.insert(n, (k, t)),
        }
    }

    pub fn remove(&mut self, k: usize, i: usize) {
        if let Some(row) = self.rows.get_mut(i - 1) {
            row.retain(|e| e.0 != k);
        }
    }

    /// Sum of row `i`, accumulated in ascending `k`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().map(|e| e.1).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(k, t)| (k, r + 1, t)))
    }

    /// Declared skip edges `(k, i)` with `k < i - 1`, whatever their weight.
    pub fn skip_edges(&self) -> Vec<(usize, usize)> {
        self.entries()
            .filter(|&(k, i, _)| k + 1 != i)
            .map(|(k, i, _)| (k, i))
            .collect()
    }

    /// True when every row is exactly `t(i-1, i-1) = 1` with nothing else
    /// stored.
    pub fn is_pass_through(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(r, row)| row.as_slice() == [(r, 1.0)])
    }

    /// True when all weight sits on the diagonal; zero-valued skip entries
    /// are allowed.
    pub fn all_weight_on_diagonal(&self) -> bool {
        self.entries()
            .all(|(k, i, t)| if k + 1 == i { t == 1.0 } else { t == 0.0 })
    }
}

/// A resampling matrix plus whether it is the identity (so evaluation can
/// copy instead of multiplying).
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    matrix: SparseMatrix,
    identity: bool,
}

impl Resampler {
    pub fn new(matrix: SparseMatrix) -> Self {
        let identity = matrix.is_identity();
        Resampler { matrix, identity }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }
}

/// `R(k, i-1)` for every stored skip entry, keyed by `(k, i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResampleBank {
    matrices: BTreeMap<(usize, usize), Resampler>,
}

impl ResampleBank {
    pub fn get(&self, k: usize, i: usize) -> Option<&Resampler> {
        self.matrices.get(&(k, i))
    }

    pub fn insert(&mut self, k: usize, i: usize, matrix: SparseMatrix) {
        self.matrices.insert((k, i), Resampler::new(matrix));
    }

    pub fn remove(&mut self, k: usize, i: usize) -> Option<Resampler> {
        self.matrices.remove(&(k, i))
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Resampler)> {
        self.matrices.iter().map(|(&k, v)| (k, v))
    }
}
