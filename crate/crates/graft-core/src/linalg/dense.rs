//! Row-major dense matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
///
/// Indexing is `(row, col)`; storage is a single `Vec` of length
/// `rows * cols`. All binary operations check shapes and return
/// [`Error::DimensionMismatch`] instead of panicking.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<F: Scalar = crate::Real> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> DenseMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Builds from row slices; rows must all have the same length.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "ragged rows: expected {}, got {}",
                    c,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { rows: r, cols: c, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Panics on out-of-range indices; use the row accessors in hot paths.
    pub fn get(&self, i: usize, j: usize) -> F {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of range");
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: F) {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of range");
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix product `self * rhs`.
    ///
    /// Accumulation order per output entry is ascending over the inner
    /// dimension, identical to the naive triple loop, so results are
    /// bit-reproducible. The loop nest is arranged row-by-row for
    /// vectorization, not reassociation.
    pub fn matmul(&self, rhs: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: lhs is {}x{}, rhs is {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix<F> {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
        self.zip_with(rhs, |a, b| a + b, "add")
    }

    pub fn sub(&self, rhs: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
        self.zip_with(rhs, |a, b| a - b, "sub")
    }

    pub fn add_assign(&mut self, rhs: &DenseMatrix<F>) -> Result<()> {
        self.check_same_shape(rhs, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: F, rhs: &DenseMatrix<F>) -> Result<()> {
        self.check_same_shape(rhs, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: F) -> DenseMatrix<F> {
        self.map(|x| x * alpha)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> DenseMatrix<F> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Row-wise softmax with max-subtraction for stability.
    ///
    /// `-inf` entries are mapped to zero probability; every row must contain
    /// at least one finite entry (callers enforce this via their masks).
    pub fn row_softmax(&self) -> DenseMatrix<F> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let max = row
                .iter()
                .fold(F::neg_infinity(), |m, &x| if x > m { x } else { m });
            assert!(
                max.is_finite() || self.cols == 0,
                "row_softmax: row {i} has no finite entry"
            );
            let mut sum = F::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        out
    }

    /// Largest absolute entry; zero for empty matrices.
    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    /// Largest absolute entrywise difference. Shapes must match.
    pub fn max_abs_diff(&self, rhs: &DenseMatrix<F>) -> Result<F> {
        self.check_same_shape(rhs, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(F::zero(), |m, (&a, &b)| {
                let d = (a - b).abs();
                if d > m {
                    d
                } else {
                    m
                }
            }))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn zip_with(
        &self,
        rhs: &DenseMatrix<F>,
        f: impl Fn(F, F) -> F,
        op: &str,
    ) -> Result<DenseMatrix<F>> {
        self.check_same_shape(rhs, op)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn check_same_shape(&self, rhs: &DenseMatrix<F>, op: &str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{op}: lhs is {}x{}, rhs is {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn matmul_matches_hand_computed_product() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let a = DenseMatrix::from_vec(2, 2, vec![1.5, -2.0, 0.25, 3.0]).unwrap();
        let i = DenseMatrix::identity(2);
        assert_eq!(a.matmul(&i).unwrap(), a);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        let b = DenseMatrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn transpose_round_trips() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn softmax_matches_closed_form() {
        // [ln 2, 0] -> [2/3, 1/3]
        let a = DenseMatrix::from_vec(1, 2, vec![2.0f64.ln(), 0.0]).unwrap();
        let s = a.row_softmax();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_under_large_shifts() {
        let a = DenseMatrix::from_vec(1, 2, vec![1000.0, 1000.0 + 3.0f64.ln()]).unwrap();
        let s = a.row_softmax();
        assert!(s.is_finite());
        // The shift itself rounds (1000 + ln 3 drops low mantissa bits), so
        // only the stabilized result is checked, not bit-exactness.
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_sends_neg_infinity_to_zero() {
        let a =
            DenseMatrix::from_vec(1, 3, vec![0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        let s = a.row_softmax();
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn axpy_accumulates() {
        let mut a = DenseMatrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = DenseMatrix::from_vec(1, 2, vec![10.0, 20.0]).unwrap();
        a.axpy(0.5, &b).unwrap();
        assert_eq!(a.data(), &[6.0, 12.0]);
    }
}
