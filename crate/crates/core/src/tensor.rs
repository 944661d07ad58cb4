//! Dense tensors and matrices in row-major order.
//!
//! Row-major storage makes the flat data buffer of a tensor identical to its
//! vectorization: for a matrix the rows are concatenated, and for an order-k
//! tensor the slices along the first mode are vectorized and stacked in turn.
//! Every primitive the optimizer needs (matricization, mode products,
//! contractions, Kronecker and outer products) is defined on top of that
//! layout. Modes are 0-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Order-k dense array with an explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawTensor<T>",
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<RawTensor<T>> for DenseTensor<T> {
    type Error = Error;

    fn try_from(raw: RawTensor<T>) -> Result<Self> {
        DenseTensor::new(raw.shape, raw.data)
    }
}

/// Dense `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "order must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be positive".into(),
        });
    }
    Ok(shape.iter().product())
}

/// Splits the shape around `mode` into (product of leading extents, extent,
/// product of trailing extents).
fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let outer = shape[..mode].iter().product();
    let inner = shape[mode + 1..].iter().product();
    (outer, shape[mode], inner)
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = validate_shape(&shape)?;
        if data.len() != len {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data length {} does not match", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = validate_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The vectorization of the tensor. Row-major storage makes this a view.
    pub fn vec(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, idx: &[usize]) -> T {
        debug_assert_eq!(idx.len(), self.order());
        let mut flat = 0;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            flat = flat * n + i;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::InvalidMode {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Reshapes into the `n_mode x n_{-mode}` matrix whose rows are the
    /// vectorized slices along `mode`.
    pub fn matricize(&self, mode: usize) -> Result<DenseMatrix<T>> {
        self.check_mode(mode)?;
        let (outer, n, inner) = split_at_mode(&self.shape, mode);
        let cols = outer * inner;
        let mut data = vec![T::zero(); n * cols];
        for a in 0..outer {
            for j in 0..n {
                let src = &self.data[(a * n + j) * inner..(a * n + j + 1) * inner];
                data[j * cols + a * inner..j * cols + (a + 1) * inner].copy_from_slice(src);
            }
        }
        Ok(DenseMatrix {
            rows: n,
            cols,
            data,
        })
    }

    /// Multiplies `m` (of size `p x n_mode`) into `mode`; the result has
    /// extent `p` on that mode and satisfies `mat(result) = m * mat(self)`.
    pub fn mode_product(&self, mode: usize, m: &DenseMatrix<T>) -> Result<Self> {
        self.check_mode(mode)?;
        let (outer, n, inner) = split_at_mode(&self.shape, mode);
        if m.cols != n {
            return Err(Error::ShapeMismatch {
                expected: vec![m.rows, n],
                actual: vec![m.rows, m.cols],
            });
        }
        let p = m.rows;
        let mut shape = self.shape.clone();
        shape[mode] = p;
        let mut data = vec![T::zero(); outer * p * inner];
        for a in 0..outer {
            for row in 0..p {
                let dst = &mut data[(a * p + row) * inner..(a * p + row + 1) * inner];
                for s in 0..n {
                    let coef = m.data[row * n + s];
                    if coef == T::zero() {
                        continue;
                    }
                    let src = &self.data[(a * n + s) * inner..(a * n + s + 1) * inner];
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d += coef * x;
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Diagonal scaling along `mode`: equivalent to a mode product with
    /// `diag(scale)` without materializing the matrix.
    pub fn scale_mode(&self, mode: usize, scale: &[T]) -> Result<Self> {
        self.check_mode(mode)?;
        let (outer, n, inner) = split_at_mode(&self.shape, mode);
        if scale.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![scale.len()],
            });
        }
        let mut data = self.data.clone();
        for a in 0..outer {
            for (j, &s) in scale.iter().enumerate() {
                for x in &mut data[(a * n + j) * inner..(a * n + j + 1) * inner] {
                    *x *= s;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Contraction with itself along every mode except `mode`, i.e.
    /// `mat(self) * mat(self)^T`.
    pub fn contract(&self, mode: usize) -> Result<crate::psd::SymMatrix<T>> {
        self.check_mode(mode)?;
        let (outer, n, inner) = split_at_mode(&self.shape, mode);
        let mut out = vec![T::zero(); n * n];
        for a in 0..outer {
            for j in 0..n {
                let rj = &self.data[(a * n + j) * inner..(a * n + j + 1) * inner];
                for jp in j..n {
                    let rjp = &self.data[(a * n + jp) * inner..(a * n + jp + 1) * inner];
                    let dot: T = rj.iter().zip(rjp).map(|(&x, &y)| x * y).sum();
                    out[j * n + jp] += dot;
                }
            }
        }
        for j in 0..n {
            for jp in 0..j {
                out[j * n + jp] = out[jp * n + j];
            }
        }
        Ok(crate::psd::SymMatrix::from_raw(n, out))
    }

    /// Diagonal of [`contract`](Self::contract): sum of squares of each slice along `mode`.
    pub fn contract_diagonal(&self, mode: usize) -> Result<Vec<T>> {
        self.check_mode(mode)?;
        let (outer, n, inner) = split_at_mode(&self.shape, mode);
        let mut out = vec![T::zero(); n];
        for a in 0..outer {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.data[(a * n + j) * inner..(a * n + j + 1) * inner]
                    .iter()
                    .map(|&x| x * x)
                    .sum::<T>();
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|x| x * alpha)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Entry-wise l-infinity norm.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        validate_shape(&[rows, cols])?;
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("data length {} does not match", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidShape {
                shape: vec![r, c],
                reason: "ragged rows".into(),
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Column vector `n x 1`.
    pub fn column(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn vec(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols, other.cols],
                actual: vec![other.rows, other.cols],
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let dst = &mut out.data[i * n..(i + 1) * n];
            for s in 0..k {
                let a = self.data[i * k + s];
                if a == T::zero() {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(&other.data[s * n..(s + 1) * n]) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                actual: vec![v.len()],
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows, self.cols],
                actual: vec![other.rows, other.cols],
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Views the matrix as an order-2 tensor.
    pub fn into_tensor(self) -> DenseTensor<T> {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            data: self.data,
        }
    }

    pub fn to_tensor(&self) -> DenseTensor<T> {
        self.clone().into_tensor()
    }

    /// Interprets an order-2 tensor as a matrix.
    pub fn from_tensor(t: &DenseTensor<T>) -> Result<Self> {
        if t.order() != 2 {
            return Err(Error::InvalidShape {
                shape: t.shape.clone(),
                reason: "expected an order-2 tensor".into(),
            });
        }
        Ok(Self {
            rows: t.shape[0],
            cols: t.shape[1],
            data: t.data.clone(),
        })
    }
}

/// Kronecker product: the `(m m') x (n n')` block matrix with blocks `a[i,j] * b`.
pub fn kron<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (m, n) = (a.rows, a.cols);
    let (p, q) = (b.rows, b.cols);
    let cols = n * q;
    let mut out = DenseMatrix::zeros(m * p, cols);
    for i in 0..m {
        for j in 0..n {
            let aij = a.data[i * n + j];
            for k in 0..p {
                let dst = (i * p + k) * cols + j * q;
                for l in 0..q {
                    out.data[dst + l] = aij * b.data[k * q + l];
                }
            }
        }
    }
    out
}

/// Kronecker product of a non-empty chain of matrices, left to right.
pub fn kron_all<T: Scalar>(ms: &[DenseMatrix<T>]) -> DenseMatrix<T> {
    let mut iter = ms.iter();
    let first = iter
        .next()
        .expect("kron_all needs at least one matrix")
        .clone();
    iter.fold(first, |acc, m| kron(&acc, m))
}

/// Rank-one tensor `u^1 o u^2 o ... o u^k`.
pub fn outer<T: Scalar>(vectors: &[&[T]]) -> Result<DenseTensor<T>> {
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    validate_shape(&shape)?;
    let mut data = vec![T::one()];
    for v in vectors {
        data = data
            .iter()
            .flat_map(|&a| v.iter().map(move |&b| a * b))
            .collect();
    }
    DenseTensor::new(shape, data)
}
