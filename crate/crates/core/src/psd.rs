//! Symmetric matrices, spectral decomposition, fractional powers and the
//! Loewner order.
//!
//! Powers are computed from the eigendecomposition with a fixed clamping
//! rule: eigenvalues below `tau = 1e-12 * max(lambda_max, 1)` are treated as
//! `tau` for negative exponents and as `0` for nonnegative ones. Accumulated
//! second-moment matrices are routinely rank deficient and roundoff produces
//! tiny negative eigenvalues; the clamp keeps both cases well defined.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

const CLAMP_REL: f64 = 1e-12;
/// Eigenvalues more negative than this (relative to the spectrum scale)
/// make a matrix fail the PSD precondition of the power functions.
const PSD_REL: f64 = 1e-8;
const MAX_QL_ITERATIONS: usize = 64;

/// Square symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

/// Spectral decomposition `A = sum_i lambda_i u_i u_i^T`, eigenvalues
/// descending and column `i` of `vectors` paired with `values[i]`.
#[derive(Clone, Debug)]
pub struct EigenPair<T> {
    pub values: Vec<T>,
    pub vectors: DenseMatrix<T>,
}

impl<T: Scalar> SymMatrix<T> {
    /// Validates symmetry to `1e-12 * max(1, |a_ij|)`.
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::InvalidShape {
                shape: vec![dim, dim],
                reason: format!("data length {}", data.len()),
            });
        }
        let tol = T::rel_tol(1e-12);
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                if (a - b).abs() > tol * T::one().max(a.abs()) || a.is_nan() != b.is_nan() {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        gap: (a - b).abs().as_f64(),
                    });
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<T>) -> Self {
        Self { dim, data }
    }

    /// Symmetric part `(m + m^T) / 2` of a square matrix.
    pub fn symmetrize(m: &DenseMatrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidShape {
                shape: vec![m.rows(), m.cols()],
                reason: "matrix is not square".into(),
            });
        }
        let n = m.rows();
        let half = T::lit(0.5);
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = m.get(i, i);
            for j in 0..i {
                let v = (m.get(i, j) + m.get(j, i)) * half;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(Self { dim: n, data })
    }

    pub fn from_dense(m: &DenseMatrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidShape {
                shape: vec![m.rows(), m.cols()],
                reason: "matrix is not square".into(),
            });
        }
        Self::new(m.rows(), m.data().to_vec())
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, T::one())
    }

    pub fn scaled_identity(dim: usize, s: T) -> Self {
        let mut data = vec![T::zero(); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = s;
        }
        Self { dim, data }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let dim = diag.len();
        let mut data = vec![T::zero(); dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            data[i * dim + i] = d;
        }
        Self { dim, data }
    }

    /// Rank-one matrix `v v^T`.
    pub fn outer(v: &[T]) -> Self {
        let dim = v.len();
        let mut data = Vec::with_capacity(dim * dim);
        for &a in v {
            data.extend(v.iter().map(|&b| a * b));
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        DenseMatrix::new(self.dim, self.dim, self.data.clone()).expect("square buffer")
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim, self.dim],
                actual: vec![other.dim, other.dim],
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// `self += s * I`
    pub fn add_identity(&mut self, s: T) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += s;
        }
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }
}

impl<T: Scalar> EigenPair<T> {
    /// `U diag(f(lambda)) U^T`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> SymMatrix<T> {
        let mapped: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        self.reconstruct_from(&mapped)
    }

    /// `U diag(mapped) U^T` for replacement eigenvalues `mapped`.
    pub fn reconstruct_from(&self, mapped: &[T]) -> SymMatrix<T> {
        let n = self.values.len();
        let u = self.vectors.data();
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = T::zero();
                for (k, &m) in mapped.iter().enumerate() {
                    s += u[i * n + k] * m * u[j * n + k];
                }
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix::from_raw(n, data)
    }

    pub fn reconstruct(&self) -> SymMatrix<T> {
        self.reconstruct_with(|l| l)
    }

    pub fn max(&self) -> T {
        self.values[0]
    }

    pub fn min(&self) -> T {
        *self.values.last().expect("non-empty spectrum")
    }
}

/// Symmetric eigendecomposition via Householder tridiagonalization followed
/// by the implicit QL algorithm.
pub fn sym_eig<T: Scalar>(a: &SymMatrix<T>) -> Result<EigenPair<T>> {
    if let Some(index) = a.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n = a.dim;
    let mut v = a.data.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, new_col, v[row + old_col * n]);
        }
    }
    Ok(EigenPair { values, vectors })
}

// Householder reduction to tridiagonal form (Bowdler, Martin, Reinsch and
// Wilkinson's tred2). On exit `v` holds the accumulated orthogonal transform,
// `d` the diagonal and `e[1..]` the subdiagonal. `v` is column-major so the
// inner loops, which walk down columns, stay contiguous; the symmetric input
// reads the same either way.
fn tridiagonalize<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    let at = |i: usize, j: usize| i + j * n;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
                v[at(j, i)] = T::zero();
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = T::zero();
    }
    v[at(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

// Implicit QL iterations on the symmetric tridiagonal matrix (tql2).
fn tridiagonal_ql<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    let at = |i: usize, j: usize| i + j * n;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let two = T::lit(2.0);
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iterations = 0;
            loop {
                iterations += 1;
                if iterations > MAX_QL_ITERATIONS {
                    return Err(Error::NoConvergence { iterations });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Clamping threshold for a spectrum whose largest eigenvalue is `lambda_max`.
pub fn clamp_threshold<T: Scalar>(lambda_max: T) -> T {
    T::rel_tol(CLAMP_REL) * lambda_max.max(T::one())
}

/// Maps each eigenvalue through `x -> x^alpha` under the clamping rule.
/// `lambda_max` is the scale used for the threshold.
fn clamped_power<T: Scalar>(values: &[T], lambda_max: T, alpha: T) -> Result<Vec<T>> {
    let tau = clamp_threshold(lambda_max);
    let psd_floor = -T::rel_tol(PSD_REL) * lambda_max.abs().max(T::one());
    if let Some(index) = values.iter().position(|&l| l < psd_floor) {
        return Err(Error::NotPsd {
            index,
            eigenvalue: values[index].as_f64(),
        });
    }
    if alpha < T::zero() && lambda_max <= T::zero() {
        let index = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
            .map_or(0, |(i, _)| i);
        return Err(Error::Singular {
            index,
            eigenvalue: lambda_max.as_f64(),
        });
    }
    Ok(values
        .iter()
        .map(|&l| {
            let clamped = if l >= tau {
                l
            } else if alpha < T::zero() {
                tau
            } else {
                T::zero()
            };
            clamped.powf(alpha)
        })
        .collect())
}

/// `A^alpha` for symmetric PSD `A`.
pub fn matrix_power<T: Scalar>(a: &SymMatrix<T>, alpha: T) -> Result<SymMatrix<T>> {
    let eig = sym_eig(a)?;
    let mapped = clamped_power(&eig.values, eig.max(), alpha)?;
    Ok(eig.reconstruct_from(&mapped))
}

/// Element-wise power of a diagonal (stored as its entries) under the same
/// clamping rule as [`matrix_power`].
pub fn diagonal_power<T: Scalar>(diag: &[T], alpha: T) -> Result<Vec<T>> {
    if let Some(index) = diag.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let max = diag.iter().copied().fold(T::neg_infinity(), T::max);
    clamped_power(diag, max, alpha)
}

/// `sum_i clamp(lambda_i)^alpha`, i.e. `trace(A^alpha)`.
pub fn trace_power<T: Scalar>(a: &SymMatrix<T>, alpha: T) -> Result<T> {
    let eig = sym_eig(a)?;
    Ok(clamped_power(&eig.values, eig.max(), alpha)?
        .into_iter()
        .sum())
}

/// Smallest eigenvalue of `A - B` divided by `max(1, spectral radius of A - B)`.
/// Nonnegative exactly when `A >= B` in the Loewner order.
pub fn loewner_slack<T: Scalar>(a: &SymMatrix<T>, b: &SymMatrix<T>) -> Result<T> {
    let diff = a.sub(b)?;
    let eig = sym_eig(&diff)?;
    let scale = eig.max().abs().max(eig.min().abs()).max(T::one());
    Ok(eig.min() / scale)
}

/// `A >= B` in the Loewner order, up to relative tolerance `tol`.
pub fn loewner_geq<T: Scalar>(a: &SymMatrix<T>, b: &SymMatrix<T>, tol: T) -> Result<bool> {
    Ok(loewner_slack(a, b)? >= -tol)
}

/// Singular values (descending) by one-sided Jacobi rotations. Accurate to
/// roughly machine precision relative to the largest singular value, which is
/// what numerical-rank certification needs.
pub fn singular_values<T: Scalar>(m: &DenseMatrix<T>) -> Result<Vec<T>> {
    if let Some(index) = m.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    // Work on columns of the orientation with fewer columns.
    let work = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = (work.rows(), work.cols());
    let mut cols_data: Vec<Vec<T>> = (0..cols)
        .map(|j| (0..rows).map(|i| work.get(i, j)).collect())
        .collect();
    let eps = T::epsilon();
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols_data[p], &cols_data[q]);
                    let a: T = cp.iter().map(|&x| x * x).sum();
                    let b: T = cq.iter().map(|&x| x * x).sum();
                    let g: T = cp.iter().zip(cq).map(|(&x, &y)| x * y).sum();
                    (a, b, g)
                };
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols_data.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            let mut sv: Vec<T> = cols_data
                .iter()
                .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt())
                .collect();
            sv.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
            return Ok(sv);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_sweeps,
    })
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank<T: Scalar>(m: &DenseMatrix<T>, rel_tol: T) -> Result<usize> {
    let sv = singular_values(m)?;
    let top = sv.first().copied().unwrap_or_else(T::zero);
    if top == T::zero() {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * top).count())
}
