//! Small dense row-major matrices.
//!
//! Everything in this crate is desk scale (30 buses, hidden widths of a
//! few hundred), so a plain `Vec<f64>` matrix with cache-friendly loops
//! is all the linear algebra we need.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    /// 1 x n row matrix.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Mat::from_vec(1, cols, data)
    }

    /// m x 1 column matrix.
    pub fn col_vector(data: Vec<f64>) -> Self {
        let rows = data.len();
        Mat::from_vec(rows, 1, data)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self * other. Inner loop runs over contiguous rows of `other` so the
    /// optimizer can vectorize it.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// self^T * other, without materializing the transpose.
    pub fn matmul_transpose_self(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_transpose_self shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = other.row(i);
            for (k, &aik) in arow.iter().enumerate() {
                let orow = &mut out.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// self * other^T, without materializing the transpose.
    pub fn matmul_transpose_other(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_transpose_other shape mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }
}

/// Solve `a * x = b` for square `a` with multiple right-hand sides, by LU
/// decomposition with partial pivoting. Returns `None` when `a` is singular
/// to working precision.
pub fn solve(a: &Mat, b: &Mat) -> Option<Mat> {
    assert_eq!(a.rows, a.cols, "solve requires a square matrix");
    assert_eq!(a.rows, b.rows, "solve dimension mismatch");
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        // pivot
        let mut pivot_row = col;
        let mut pivot_val = lu.at(col, col).abs();
        for r in (col + 1)..n {
            let v = lu.at(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = lu.at(col, c);
                lu.set(col, c, lu.at(pivot_row, c));
                lu.set(pivot_row, c, tmp);
            }
            for c in 0..x.cols {
                let tmp = x.at(col, c);
                x.set(col, c, x.at(pivot_row, c));
                x.set(pivot_row, c, tmp);
            }
        }
        let inv_pivot = 1.0 / lu.at(col, col);
        for r in (col + 1)..n {
            let factor = lu.at(r, col) * inv_pivot;
            if factor == 0.0 {
                continue;
            }
            lu.set(r, col, factor);
            for c in (col + 1)..n {
                let v = lu.at(r, c) - factor * lu.at(col, c);
                lu.set(r, c, v);
            }
            for c in 0..x.cols {
                let v = x.at(r, c) - factor * x.at(col, c);
                x.set(r, c, v);
            }
        }
    }

    // back substitution
    for col in (0..n).rev() {
        let inv_pivot = 1.0 / lu.at(col, col);
        for c in 0..x.cols {
            let mut v = x.at(col, c);
            for k in (col + 1)..n {
                v -= lu.at(col, k) * x.at(k, c);
            }
            x.set(col, c, v * inv_pivot);
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_matmuls_agree_with_explicit_transpose() {
        let a = Mat::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, 2.0, 1.0]);
        let b = Mat::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect());
        let expect = a.transpose().matmul(&b);
        let got = a.matmul_transpose_self(&b);
        assert_eq!(expect, got);

        let c = Mat::from_vec(5, 2, (0..10).map(|i| (i as f64).sin()).collect());
        let d = Mat::from_vec(3, 2, (0..6).map(|i| (i as f64).cos()).collect());
        let expect = c.matmul(&d.transpose());
        let got = c.matmul_transpose_other(&d);
        for (e, g) in expect.data.iter().zip(&got.data) {
            assert!((e - g).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_identity_and_random() {
        let a = Mat::from_vec(3, 3, vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = Mat::col_vector(vec![1.0, 2.0, 3.0]);
        let x = solve(&a, &b).unwrap();
        let back = a.matmul(&x);
        for (got, want) in back.data.iter().zip(&b.data) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_singular_returns_none() {
        let a = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        let b = Mat::col_vector(vec![1.0, 1.0]);
        assert!(solve(&a, &b).is_none());
    }
}
