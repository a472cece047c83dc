//! Dense matrix/vector primitives and the differentiable building blocks
//! used by the losses and heads.
//!
//! All operations are pure and run in the caller's scalar precision.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Errors if the length is not rows x cols.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: c,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    /// self += alpha * other, elementwise.
    pub fn axpy(&mut self, alpha: S, other: &Matrix<S>) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::axpy",
                expected: self.data.len(),
                actual: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * *b;
        }
        Ok(())
    }

    /// self = alpha * self + other, elementwise (momentum-style in-place blend).
    pub fn scale_add(&mut self, alpha: S, other: &Matrix<S>) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::scale_add",
                expected: self.data.len(),
                actual: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = alpha * *a + *b;
        }
        Ok(())
    }
}

/// Standard matrix-vector product W x.
pub fn matvec<S: Scalar>(w: &Matrix<S>, x: &[S]) -> Result<Vec<S>> {
    if w.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "matvec",
            expected: w.cols(),
            actual: x.len(),
        });
    }
    Ok((0..w.rows())
        .map(|r| dot(w.row(r), x))
        .collect())
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    v.iter().map(|x| *x * *x).sum::<S>().sqrt()
}

/// L2 normalization. Returns the unit vector and the norm.
///
/// Vectors with norm below the degeneracy threshold normalize to the zero
/// vector with norm 0 instead of erroring; transiently vanishing features
/// must not abort a training run. The backward pass does error in that case.
pub fn l2_normalize<S: Scalar>(v: &[S]) -> (Vec<S>, S) {
    let norm = l2_norm(v);
    if norm <= S::norm_eps() {
        return (vec![S::zero(); v.len()], S::zero());
    }
    (v.iter().map(|x| *x / norm).collect(), norm)
}

/// Gradient of L2 normalization: given dL/d(v/|v|), returns dL/dv via the
/// Jacobian (I - u u^T) / |v| with u = v/|v|.
pub fn l2_normalize_backward<S: Scalar>(v: &[S], grad_unit: &[S]) -> Result<Vec<S>> {
    if v.len() != grad_unit.len() {
        return Err(Error::DimensionMismatch {
            context: "l2_normalize_backward",
            expected: v.len(),
            actual: grad_unit.len(),
        });
    }
    let norm = l2_norm(v);
    if norm <= S::norm_eps() {
        return Err(Error::DegenerateNorm {
            context: "l2_normalize_backward",
        });
    }
    let unit: Vec<S> = v.iter().map(|x| *x / norm).collect();
    let radial = dot(&unit, grad_unit);
    Ok(unit
        .iter()
        .zip(grad_unit)
        .map(|(u, g)| (*g - radial * *u) / norm)
        .collect())
}

/// Numerically stable softmax (max-subtraction before exponentiation).
pub fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = z.iter().map(|x| (*x - m).exp()).collect();
    let denom: S = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matvec_identity() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(matvec(&w, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn matvec_zero() {
        let w = Matrix::<f64>::zeros(3, 2);
        assert_eq!(matvec(&w, &[5.0, -2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn matvec_hand_case() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&w, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_dim_mismatch() {
        let w = Matrix::<f64>::zeros(2, 3);
        assert!(matvec(&w, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let (unit, norm) = l2_normalize(&[3.0_f64, 4.0]);
        assert_close(norm, 5.0, 1e-15);
        assert_close(unit[0], 0.6, 1e-15);
        assert_close(unit[1], 0.8, 1e-15);
    }

    #[test]
    fn normalize_zero_vector() {
        let (unit, norm) = l2_normalize(&[0.0_f64, 0.0]);
        assert_eq!(unit, vec![0.0, 0.0]);
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn normalize_already_unit() {
        let (unit, norm) = l2_normalize(&[1.0_f64, 0.0, 0.0]);
        assert_eq!(unit, vec![1.0, 0.0, 0.0]);
        assert_eq!(norm, 1.0);
    }

    #[test]
    fn normalize_backward_axis_aligned() {
        let g = l2_normalize_backward(&[1.0_f64, 0.0], &[0.0, 1.0]).unwrap();
        assert_close(g[0], 0.0, 1e-15);
        assert_close(g[1], 1.0, 1e-15);
    }

    #[test]
    fn normalize_backward_scaling() {
        let g = l2_normalize_backward(&[2.0_f64, 0.0], &[0.0, 1.0]).unwrap();
        assert_close(g[0], 0.0, 1e-15);
        assert_close(g[1], 0.5, 1e-15);
    }

    #[test]
    fn normalize_backward_radial_annihilated() {
        let g = l2_normalize_backward(&[1.0_f64, 0.0], &[1.0, 0.0]).unwrap();
        assert_close(g[0], 0.0, 1e-15);
        assert_close(g[1], 0.0, 1e-15);
    }

    #[test]
    fn normalize_backward_degenerate_errors() {
        assert!(l2_normalize_backward(&[0.0_f64, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn softmax_uniform() {
        let s = softmax(&[0.0_f64, 0.0, 0.0]);
        for v in s {
            assert_close(v, 1.0 / 3.0, 1e-15);
        }
    }

    #[test]
    fn softmax_no_overflow() {
        let s = softmax(&[1000.0_f64, 0.0]);
        assert!(s.iter().all(|v| v.is_finite()));
        assert_close(s[0], 1.0, 1e-12);
        assert_close(s[1], 0.0, 1e-12);
    }

    #[test]
    fn softmax_hand_case() {
        let s = softmax(&[2.0_f64.ln(), 0.0]);
        assert_close(s[0], 2.0 / 3.0, 1e-15);
        assert_close(s[1], 1.0 / 3.0, 1e-15);
    }

    #[test]
    fn softmax_f32_instantiation() {
        let s = softmax(&[0.5_f32, -0.5]);
        assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
