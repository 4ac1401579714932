//! Row-major dense matrices and the handful of products training needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix by stacking the given rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has length {}, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the selected rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `out = x * w^T + bias` where `x` is `n x in`, `w` is `out x in` row-major.
pub(crate) fn affine_nt<T: Scalar>(x: &Matrix<T>, w: &[T], bias: &[T], out: &mut Matrix<T>) {
    let (n, k) = (x.rows, x.cols);
    let m_out = bias.len();
    assert_eq!(w.len(), m_out * k);
    assert_eq!((out.rows, out.cols), (n, m_out));
    for r in 0..n {
        out.row_mut(r).copy_from_slice(bias);
    }
    if n == 0 || k == 0 || m_out == 0 {
        return;
    }
    unsafe {
        T::gemm_raw(
            n,
            k,
            m_out,
            T::one(),
            x.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            T::one(),
            out.data.as_mut_ptr(),
            m_out as isize,
            1,
        );
    }
}

/// `dw += dz^T * x` where `dz` is `n x out`, `x` is `n x in`, `dw` is `out x in`.
pub(crate) fn accumulate_tn<T: Scalar>(dz: &Matrix<T>, x: &Matrix<T>, dw: &mut [T]) {
    let (n, m_out, k) = (dz.rows, dz.cols, x.cols);
    assert_eq!(x.rows, n);
    assert_eq!(dw.len(), m_out * k);
    if n == 0 || k == 0 || m_out == 0 {
        return;
    }
    unsafe {
        T::gemm_raw(
            m_out,
            n,
            k,
            T::one(),
            dz.data.as_ptr(),
            1,
            m_out as isize,
            x.data.as_ptr(),
            k as isize,
            1,
            T::one(),
            dw.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `dx = dz * w` where `dz` is `n x out` and `w` is `out x in`.
pub(crate) fn matmul_nn<T: Scalar>(dz: &Matrix<T>, w: &[T], in_dim: usize) -> Matrix<T> {
    let (n, m_out) = (dz.rows, dz.cols);
    let mut dx = Matrix::zeros(n, in_dim);
    if n == 0 || in_dim == 0 || m_out == 0 {
        return dx;
    }
    unsafe {
        T::gemm_raw(
            n,
            m_out,
            in_dim,
            T::one(),
            dz.data.as_ptr(),
            m_out as isize,
            1,
            w.as_ptr(),
            in_dim as isize,
            1,
            T::zero(),
            dx.data.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
    dx
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = norm(a) * norm(b);
    if denom > T::zero() {
        dot(a, b) / denom
    } else {
        T::zero()
    }
}
