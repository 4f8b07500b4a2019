//! CSR sparse matrices with shared sparsity patterns.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Structure of a CSR matrix: row offsets plus column indices.
///
/// Column indices are strictly ascending within each row (canonical form, no
/// duplicates). The pattern is reference-counted so several matrices (an
/// attention mask, its softmax, its gradient) can share one allocation.
#[derive(Clone, Debug)]
pub struct SparsityPattern {
    rows: usize,
    cols: usize,
    row_offsets: Arc<[usize]>,
    col_indices: Arc<[usize]>,
}

impl SparsityPattern {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(Error::DimensionMismatch(format!(
                "row_offsets must span [0, {}], got [{}, {}]",
                col_indices.len(),
                row_offsets[0],
                row_offsets.last().unwrap()
            )));
        }
        for i in 0..rows {
            if row_offsets[i] > row_offsets[i + 1] {
                return Err(Error::DimensionMismatch(format!(
                    "row_offsets not monotone at row {i}"
                )));
            }
            let cols_i = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            for w in cols_i.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::DuplicateEdge(i, w[0]));
                }
                if w[0] > w[1] {
                    return Err(Error::IndexOutOfRange(format!(
                        "row {i} columns not ascending: {} before {}",
                        w[0], w[1]
                    )));
                }
            }
            if let Some(&last) = cols_i.last() {
                if last >= cols {
                    return Err(Error::IndexOutOfRange(format!(
                        "column {last} in row {i} exceeds matrix width {cols}"
                    )));
                }
            }
        }
        Ok(SparsityPattern {
            rows,
            cols,
            row_offsets: row_offsets.into(),
            col_indices: col_indices.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Slot range of row `i` into the value/column arrays.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_range(i)]
    }

    /// Slot index of entry `(i, j)` if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let range = self.row_range(i);
        self.col_indices[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| range.start + k)
    }

    /// True when both patterns share storage or have equal structure.
    pub fn same_structure(&self, other: &SparsityPattern) -> bool {
        (Arc::ptr_eq(&self.row_offsets, &other.row_offsets)
            && Arc::ptr_eq(&self.col_indices, &other.col_indices))
            || (self.rows == other.rows
                && self.cols == other.cols
                && self.row_offsets == other.row_offsets
                && self.col_indices == other.col_indices)
    }

    /// True when `(i, j)` present implies `(j, i)` present.
    pub fn is_structurally_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for &j in self.row_cols(i) {
                if self.find(j, i).is_none() {
                    return false;
                }
            }
        }
        true
    }

    /// True when every diagonal entry is structurally present.
    pub fn has_full_diagonal(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| self.find(i, i).is_some())
    }
}

/// CSR matrix over a shared [`SparsityPattern`].
#[derive(Clone, Debug)]
pub struct CsrMatrix<F: Scalar = crate::Real> {
    pattern: SparsityPattern,
    values: Vec<F>,
}

impl<F: Scalar> CsrMatrix<F> {
    /// Builds from an unordered edge list.
    ///
    /// Entries are sorted into canonical CSR form. Duplicate coordinates are
    /// rejected with [`Error::DuplicateEdge`]; out-of-range coordinates with
    /// [`Error::IndexOutOfRange`].
    pub fn from_edges(rows: usize, cols: usize, edges: &[(usize, usize, F)]) -> Result<Self> {
        for &(i, j, _) in edges {
            if i >= rows || j >= cols {
                return Err(Error::IndexOutOfRange(format!(
                    "edge ({i}, {j}) outside {rows}x{cols} matrix"
                )));
            }
        }
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in edges {
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts;
        let mut slot = row_offsets.clone();
        let mut col_indices = vec![0usize; edges.len()];
        let mut values = vec![F::zero(); edges.len()];
        for &(i, j, v) in edges {
            let s = slot[i];
            col_indices[s] = j;
            values[s] = v;
            slot[i] += 1;
        }
        // Sort each row by column, carrying values along.
        for i in 0..rows {
            let range = row_offsets[i]..row_offsets[i + 1];
            let mut entries: Vec<(usize, F)> = col_indices[range.clone()]
                .iter()
                .copied()
                .zip(values[range.clone()].iter().copied())
                .collect();
            entries.sort_unstable_by_key(|&(j, _)| j);
            for w in entries.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::DuplicateEdge(i, w[0].0));
                }
            }
            for (k, (j, v)) in entries.into_iter().enumerate() {
                col_indices[range.start + k] = j;
                values[range.start + k] = v;
            }
        }
        let pattern = SparsityPattern::new(rows, cols, row_offsets, col_indices)?;
        Ok(CsrMatrix { pattern, values })
    }

    /// Pairs an existing pattern with a value vector of matching length.
    pub fn from_pattern(pattern: SparsityPattern, values: Vec<F>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch(format!(
                "pattern has {} slots, got {} values",
                pattern.nnz(),
                values.len()
            )));
        }
        Ok(CsrMatrix { pattern, values })
    }

    pub fn identity(n: usize) -> Self {
        let edges: Vec<(usize, usize, F)> = (0..n).map(|i| (i, i, F::one())).collect();
        CsrMatrix::from_edges(n, n, &edges).expect("identity edges are valid")
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows()
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn row_offsets(&self) -> &[usize] {
        self.pattern.row_offsets()
    }

    pub fn col_indices(&self) -> &[usize] {
        self.pattern.col_indices()
    }

    /// `(column, value)` pairs of row `i`, columns ascending.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let range = self.pattern.row_range(i);
        self.pattern.col_indices()[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<F> {
        self.pattern.find(i, j).map(|s| self.values[s])
    }

    pub fn to_dense(&self) -> DenseMatrix<F> {
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        for i in 0..self.rows() {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// Sparse-dense product `self * rhs`, O(nnz * rhs.cols()).
    ///
    /// Per output row the structural entries accumulate in ascending column
    /// order, which fixes the floating-point result.
    pub fn spmm(&self, rhs: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
        if self.cols() != rhs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "spmm: lhs is {}x{}, rhs is {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let n = rhs.cols();
        let mut out = DenseMatrix::zeros(self.rows(), n);
        for i in 0..self.rows() {
            let out_row = out.row_mut(i);
            for (j, v) in self.row_entries(i) {
                let b_row = rhs.row(j);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// Transposed product `self^T * rhs` without materializing the transpose.
    ///
    /// Scatters `value * rhs.row(i)` into output row `j` for each entry
    /// `(i, j)`, iterating slots in CSR order (deterministic).
    pub fn spmm_t(&self, rhs: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
        if self.rows() != rhs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "spmm_t: lhs^T is {}x{}, rhs is {}x{}",
                self.cols(),
                self.rows(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let n = rhs.cols();
        let mut out = DenseMatrix::zeros(self.cols(), n);
        for i in 0..self.rows() {
            let b_row = rhs.row(i).to_vec();
            for (j, v) in self.row_entries(i) {
                let out_row = out.row_mut(j);
                for (o, &b) in out_row.iter_mut().zip(&b_row) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// Softmax over the structural entries of each row.
    ///
    /// Missing entries are treated as `-inf` (zero probability), present
    /// entries are stabilized by subtracting the row maximum. A row without
    /// structural entries has no well-defined distribution and yields
    /// [`Error::EmptyRow`].
    pub fn masked_row_softmax(&self) -> Result<CsrMatrix<F>> {
        let mut values = self.values.clone();
        for i in 0..self.rows() {
            let range = self.pattern.row_range(i);
            let row = &mut values[range];
            if row.is_empty() {
                return Err(Error::EmptyRow(i));
            }
            let max = row
                .iter()
                .fold(F::neg_infinity(), |m, &x| if x > m { x } else { m });
            let mut sum = F::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        Ok(CsrMatrix {
            pattern: self.pattern.clone(),
            values,
        })
    }

    /// Transpose in canonical CSR form (counting sort; deterministic).
    pub fn transpose(&self) -> CsrMatrix<F> {
        let mut counts = vec![0usize; self.cols() + 1];
        for &j in self.col_indices() {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols() {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts;
        let mut slot = row_offsets.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![F::zero(); self.nnz()];
        for i in 0..self.rows() {
            for (j, v) in self.row_entries(i) {
                let s = slot[j];
                col_indices[s] = i;
                values[s] = v;
                slot[j] += 1;
            }
        }
        let pattern = SparsityPattern::new(self.cols(), self.rows(), row_offsets, col_indices)
            .expect("transpose of a canonical pattern is canonical");
        CsrMatrix { pattern, values }
    }

    pub fn row_sums(&self) -> Vec<F> {
        (0..self.rows())
            .map(|i| {
                self.row_entries(i)
                    .fold(F::zero(), |acc, (_, v)| acc + v)
            })
            .collect()
    }

    /// First row whose sum deviates from one by more than `tol`, if any.
    pub fn check_row_stochastic(&self, tol: F) -> std::result::Result<(), (usize, F)> {
        for (i, sum) in self.row_sums().into_iter().enumerate() {
            if (sum - F::one()).abs() > tol {
                return Err((i, sum));
            }
        }
        Ok(())
    }

    pub fn map_values(&self, f: impl Fn(F) -> F) -> CsrMatrix<F> {
        CsrMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Values `a.row(i) . b.row(j)` for each structural entry `(i, j)`.
///
/// This is the masked outer-product `(a b^T)` restricted to the pattern, the
/// shape of an attention-probability gradient.
pub fn masked_outer<F: Scalar>(
    pattern: &SparsityPattern,
    a: &DenseMatrix<F>,
    b: &DenseMatrix<F>,
) -> Result<CsrMatrix<F>> {
    if a.rows() != pattern.rows() || b.rows() != pattern.cols() || a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "masked_outer: pattern {}x{}, a {}x{}, b {}x{}",
            pattern.rows(),
            pattern.cols(),
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut values = Vec::with_capacity(pattern.nnz());
    for i in 0..pattern.rows() {
        let a_row = a.row(i);
        for &j in pattern.row_cols(i) {
            let b_row = b.row(j);
            let mut dot = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                dot += x * y;
            }
            values.push(dot);
        }
    }
    CsrMatrix::from_pattern(pattern.clone(), values)
}
