use std::fmt;

use super::counter::record;
use crate::error::{HutError, Result};

/// Dense row-major `f64` matrix.
///
/// Arithmetic methods return new matrices and charge their cost to the
/// thread's active [`FlopScope`](super::FlopScope), if any.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for (i, row) in self.data.chunks(self.cols).enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            if i >= 8 {
                write!(f, "...")?;
                break;
            }
            write!(f, "{row:?}")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(HutError::InvalidMatrix(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(HutError::InvalidMatrix(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input;
    /// intended for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        DenseMatrix::new(rows.len(), cols, data).expect("from_rows: empty matrix")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "dimensions must be positive");
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn check_same_shape(&self, other: &DenseMatrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(HutError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn check_row_vector(&self, v: &DenseMatrix, op: &'static str) -> Result<()> {
        if v.rows != 1 || v.cols != self.cols {
            return Err(HutError::Shape {
                op,
                left: self.shape(),
                right: v.shape(),
            });
        }
        Ok(())
    }

    /// Matrix product. Costs `(2r - 1)·d·k` for a `d×r` by `r×k` product.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(HutError::Shape {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let (d, r, k) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; d * k];
        for i in 0..d {
            let out_row = &mut out[i * k..(i + 1) * k];
            for l in 0..r {
                let a = self.data[i * r + l];
                let rhs_row = &rhs.data[l * k..(l + 1) * k];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        record(((2 * r - 1) * d * k) as u64);
        Ok(DenseMatrix {
            rows: d,
            cols: k,
            data: out,
        })
    }

    /// Elementwise product `A ⊙ B`. Costs `d·k`.
    pub fn hadamard(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(rhs, "hadamard")?;
        record(self.len() as u64);
        Ok(self.zip_with(rhs, |a, b| a * b))
    }

    pub fn add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(rhs, "add")?;
        record(self.len() as u64);
        Ok(self.zip_with(rhs, |a, b| a + b))
    }

    pub fn sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(rhs, "sub")?;
        record(self.len() as u64);
        Ok(self.zip_with(rhs, |a, b| a - b))
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        record(self.len() as u64);
        self.map(|v| v * s)
    }

    /// Mean of every row: `d×r -> d×1`. Costs `r` per row.
    pub fn row_mean(&self) -> DenseMatrix {
        let r = self.cols as f64;
        let data = self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().sum::<f64>() / r)
            .collect();
        record(self.len() as u64);
        DenseMatrix {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Mean of every column: `r×k -> 1×k`. Costs `r` per column.
    pub fn col_mean(&self) -> DenseMatrix {
        let r = self.rows as f64;
        let mut data = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= r;
        }
        record(self.len() as u64);
        DenseMatrix {
            rows: 1,
            cols: self.cols,
            data,
        }
    }

    /// Column sums `N×k -> 1×k`. Costs `(N - 1)·k`.
    pub fn col_sum(&self) -> DenseMatrix {
        let mut data = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        record(((self.rows - 1) * self.cols) as u64);
        DenseMatrix {
            rows: 1,
            cols: self.cols,
            data,
        }
    }

    /// Outer product of a `d×1` column and a `1×k` row. Costs `d·k`.
    pub fn outer(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        if a.cols != 1 || b.rows != 1 {
            return Err(HutError::Shape {
                op: "outer",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let (d, k) = (a.rows, b.cols);
        let mut data = Vec::with_capacity(d * k);
        for &ai in &a.data {
            data.extend(b.data.iter().map(|bj| ai * bj));
        }
        record((d * k) as u64);
        Ok(DenseMatrix {
            rows: d,
            cols: k,
            data,
        })
    }

    /// `out[n, j] = gamma[j]·self[n, j] + beta[j]`. Costs `2·N·k`.
    pub fn scale_shift(&self, gamma: &DenseMatrix, beta: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_row_vector(gamma, "scale_shift")?;
        self.check_row_vector(beta, "scale_shift")?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for ((v, g), b) in row.iter_mut().zip(&gamma.data).zip(&beta.data) {
                *v = g * *v + b;
            }
        }
        record((2 * self.len()) as u64);
        Ok(out)
    }

    /// Adds a `1×k` row to every row. Costs `N·k`.
    pub fn add_row(&self, bias: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_row_vector(bias, "add_row")?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        record(self.len() as u64);
        Ok(out)
    }

    /// Multiplies every row elementwise by a `1×k` row. Costs `N·k`.
    pub fn mul_row(&self, scale: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_row_vector(scale, "mul_row")?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for (v, s) in row.iter_mut().zip(&scale.data) {
                *v *= s;
            }
        }
        record(self.len() as u64);
        Ok(out)
    }

    /// Repeats a `1×k` row `rows` times. Charged one operation per entry
    /// produced.
    pub fn broadcast_rows(&self, rows: usize) -> Result<DenseMatrix> {
        if self.rows != 1 || rows == 0 {
            return Err(HutError::InvalidArgument(format!(
                "broadcast_rows expects a 1xk row and positive count, got {:?} x{rows}",
                self.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * self.cols);
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        record((rows * self.cols) as u64);
        Ok(DenseMatrix {
            rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.data[i * self.cols + j]);
            }
        }
        DenseMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Elementwise map. Not counted; used for nonlinearities and test
    /// fixtures.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, rhs: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Max-norm relative difference `max|a - b| / max|b|`; zero when both are
/// zero. Panics on shape mismatch.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error: shape mismatch");
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        return 0.0;
    }
    diff / b.max_abs().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FlopScope;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows)
    }

    #[test]
    fn construction_validates_length() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
        assert!(DenseMatrix::new(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_examples() {
        let id = DenseMatrix::identity(2);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(id.matmul(&b).unwrap(), b);
        let dot = m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(dot, m(&[&[11.0]]));
    }

    #[test]
    fn matmul_counts_4x4() {
        let a = DenseMatrix::ones(4, 4);
        let scope = FlopScope::begin().unwrap();
        a.matmul(&a).unwrap();
        assert_eq!(scope.count(), 112);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = DenseMatrix::ones(2, 3).matmul(&DenseMatrix::ones(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, HutError::Shape { left: (2, 3), right: (2, 3), .. }));
    }

    #[test]
    fn hadamard_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(a.hadamard(&b).unwrap(), m(&[&[5.0, 12.0], &[21.0, 32.0]]));
        assert_eq!(a.hadamard(&DenseMatrix::ones(2, 2)).unwrap(), a);
        assert_eq!(
            a.hadamard(&DenseMatrix::zeros(2, 2)).unwrap(),
            DenseMatrix::zeros(2, 2)
        );
        assert!(a.hadamard(&DenseMatrix::ones(2, 3)).is_err());
    }

    #[test]
    fn means() {
        assert_eq!(m(&[&[2.0, 4.0]]).row_mean(), m(&[&[3.0]]));
        let col = m(&[&[1.5], &[-2.0], &[7.0]]);
        assert_eq!(col.row_mean(), col);
        assert_eq!(DenseMatrix::ones(3, 4).row_mean(), DenseMatrix::ones(3, 1));

        assert_eq!(m(&[&[1.0], &[3.0]]).col_mean(), m(&[&[2.0]]));
        let row = m(&[&[1.5, -2.0, 7.0]]);
        assert_eq!(row.col_mean(), row);
        assert_eq!(DenseMatrix::ones(4, 3).col_mean(), DenseMatrix::ones(1, 3));
    }

    #[test]
    fn mean_costs() {
        let a = DenseMatrix::ones(5, 3);
        let s = FlopScope::begin().unwrap();
        a.row_mean();
        assert_eq!(s.count(), 15);
        a.col_mean();
        assert_eq!(s.count(), 30);
    }

    #[test]
    fn outer_examples() {
        let ones = DenseMatrix::outer(&DenseMatrix::ones(2, 1), &DenseMatrix::ones(1, 2)).unwrap();
        assert_eq!(ones, DenseMatrix::ones(2, 2));
        let o = DenseMatrix::outer(&m(&[&[2.0], &[4.0]]), &m(&[&[3.0, 5.0]])).unwrap();
        assert_eq!(o, m(&[&[6.0, 10.0], &[12.0, 20.0]]));
        let z = DenseMatrix::outer(&DenseMatrix::zeros(3, 1), &m(&[&[3.0, 5.0]])).unwrap();
        assert_eq!(z, DenseMatrix::zeros(3, 2));
        assert!(DenseMatrix::outer(&DenseMatrix::ones(1, 2), &DenseMatrix::ones(1, 2)).is_err());
    }

    #[test]
    fn scale_shift_examples() {
        let y = m(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        let same = y
            .scale_shift(&DenseMatrix::ones(1, 2), &DenseMatrix::zeros(1, 2))
            .unwrap();
        assert_eq!(same, y);

        let out = m(&[&[1.0, 2.0]])
            .scale_shift(&m(&[&[3.0, 4.0]]), &m(&[&[1.0, 1.0]]))
            .unwrap();
        assert_eq!(out, m(&[&[4.0, 9.0]]));

        let beta = m(&[&[0.25, -1.0]]);
        let shifted = DenseMatrix::zeros(3, 2)
            .scale_shift(&m(&[&[7.0, 8.0]]), &beta)
            .unwrap();
        assert_eq!(shifted, beta.broadcast_rows(3).unwrap());
    }

    #[test]
    fn scale_shift_cost_and_shape() {
        let y = DenseMatrix::ones(3, 4);
        let s = FlopScope::begin().unwrap();
        y.scale_shift(&DenseMatrix::ones(1, 4), &DenseMatrix::zeros(1, 4))
            .unwrap();
        assert_eq!(s.count(), 24);
        assert!(y
            .scale_shift(&DenseMatrix::ones(1, 3), &DenseMatrix::zeros(1, 4))
            .is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(a.transpose().shape(), (3, 2));
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn relative_error_basics() {
        let a = m(&[&[1.0, 2.0]]);
        assert_eq!(relative_error(&a, &a), 0.0);
        let b = m(&[&[1.0, 2.2]]);
        assert!((relative_error(&b, &a) - 0.1).abs() < 1e-12);
    }
}
