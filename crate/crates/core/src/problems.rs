//! Synthetic online convex problems with known structure.
//!
//! Every round `t` draws a fresh mini-batch from a ChaCha stream keyed by
//! `(seed, t)`, so a problem is a pure function of its spec and seed and never
//! stores the data sequence. Losses are batch means.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{sym_eig, SymMatrix};
use crate::tensor::{outer, DenseMatrix, DenseTensor};

type Tensor = DenseTensor<f64>;
type Matrix = DenseMatrix<f64>;

/// Gradient-norm target for the iterative offline solver (mean objective).
pub const OFFLINE_GRAD_TOL: f64 = 1e-9;
/// Allowed objective gap between the solver and its restarted twin.
pub const RESTART_AGREEMENT: f64 = 1e-8;
const OFFLINE_MAX_ITERS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    /// `(1/2b) sum (<W, u v^T> - y)^2` with a planted low-rank-subspace model.
    MatrixLeastSquares,
    /// Softmax cross-entropy; `W` is `classes x features`.
    MulticlassLogistic,
    /// Least squares over rank-one tensor examples of any order.
    TensorRegression,
    /// `1/2 <W - C_t, (W - C_t) x_1 P_1 ... x_k P_k>` with a Kronecker Hessian.
    Quadratic,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::MatrixLeastSquares => "matrix_least_squares",
            LossFamily::MulticlassLogistic => "multiclass_logistic",
            LossFamily::TensorRegression => "tensor_regression",
            LossFamily::Quadratic => "quadratic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: LossFamily,
    pub shape: Vec<usize>,
    /// Condition number of the expected Hessian (feature covariance for the
    /// regression families).
    #[serde(default = "one")]
    pub condition: f64,
    /// Per-mode subspace dimensions `r_i <= n_i`; full when absent.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    /// Target noise for regression, center jitter for the quadratic.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

impl ProblemSpec {
    pub fn new(family: LossFamily, shape: &[usize]) -> Self {
        Self {
            family,
            shape: shape.to_vec(),
            condition: 1.0,
            ranks: None,
            noise: default_noise(),
        }
    }

    pub fn with_condition(mut self, condition: f64) -> Self {
        self.condition = condition;
        self
    }

    pub fn with_ranks(mut self, ranks: &[usize]) -> Self {
        self.ranks = Some(ranks.to_vec());
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.ranks.clone().unwrap_or_else(|| self.shape.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason,
            })
        };
        if self.shape.is_empty() || self.shape.contains(&0) {
            return bad("extents must be positive and the order at least 1".into());
        }
        let k = self.shape.len();
        match self.family {
            LossFamily::MatrixLeastSquares if k != 2 => {
                return bad("matrix least squares needs order 2".into())
            }
            LossFamily::MulticlassLogistic if k != 2 || self.shape[0] < 2 => {
                return bad("logistic needs shape [classes >= 2, features]".into())
            }
            _ => {}
        }
        if let Some(r) = &self.ranks {
            if r.len() != k {
                return bad(format!("{} ranks for an order-{k} problem", r.len()));
            }
            for (i, (&ri, &ni)) in r.iter().zip(&self.shape).enumerate() {
                if ri == 0 || ri > ni {
                    return bad(format!("rank {ri} on mode {i} must lie in 1..={ni}"));
                }
            }
            let fixed = match self.family {
                LossFamily::Quadratic => (0..k).collect::<Vec<_>>(),
                LossFamily::MulticlassLogistic => vec![0],
                _ => vec![],
            };
            if let Some(&i) = fixed.iter().find(|&&i| r[i] != self.shape[i]) {
                return bad(format!(
                    "rank of mode {i} is not controllable for {}",
                    self.family.name()
                ));
            }
        }
        if !(self.condition >= 1.0 && self.condition.is_finite()) {
            return Err(Error::InvalidConfig(
                "condition must be finite and >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Model {
    Regression {
        /// `n_i x r_i` orthonormal bases.
        bases: Vec<Matrix>,
        /// Per-mode factor scales, length `r_i`.
        scales: Vec<Vec<f64>>,
        /// Planted parameter in reduced coordinates, shape `r`.
        planted_reduced: Tensor,
    },
    Logistic {
        basis: Matrix,
        scales: Vec<f64>,
        planted: Matrix,
    },
    Quadratic {
        factors: Vec<Matrix>,
        center: Tensor,
        centers: Option<Vec<Tensor>>,
    },
}

/// One example of a regression batch, stored in reduced coordinates.
struct RegressionExample {
    factors: Vec<Vec<f64>>,
    target: f64,
}

#[derive(Clone, Debug)]
pub struct OnlineProblem {
    spec: ProblemSpec,
    horizon: usize,
    batch: usize,
    seed: u64,
    model: Model,
    fingerprint: u64,
}

/// Builds a problem. Deterministic in `(spec, horizon, batch, seed)`.
pub fn make_problem(
    spec: &ProblemSpec,
    horizon: usize,
    batch: usize,
    seed: u64,
) -> Result<OnlineProblem> {
    spec.validate()?;
    if batch == 0 {
        return Err(Error::InvalidConfig("batch must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks = spec.ranks();
    let model = match spec.family {
        LossFamily::MatrixLeastSquares | LossFamily::TensorRegression => {
            let spread = mode_spread(&ranks, spec.condition.sqrt());
            let bases = spec
                .shape
                .iter()
                .zip(&ranks)
                .map(|(&n, &r)| orthonormal_columns(&mut rng, n, r))
                .collect();
            let scales = ranks.iter().map(|&r| geometric(r, spread)).collect();
            let planted_reduced = gaussian_tensor(&mut rng, &ranks, 1.0);
            Model::Regression {
                bases,
                scales,
                planted_reduced,
            }
        }
        LossFamily::MulticlassLogistic => {
            let (classes, features) = (spec.shape[0], spec.shape[1]);
            let r = ranks[1];
            let basis = orthonormal_columns(&mut rng, features, r);
            let scales = geometric(r, if r > 1 { spec.condition.sqrt() } else { 1.0 });
            let planted = gaussian_matrix(&mut rng, classes, features, 1.0);
            Model::Logistic {
                basis,
                scales,
                planted,
            }
        }
        LossFamily::Quadratic => {
            let spread = mode_spread(&spec.shape, spec.condition);
            let factors = spec
                .shape
                .iter()
                .map(|&n| spd_with_spectrum(&mut rng, &geometric(n, spread)))
                .collect();
            let center = gaussian_tensor(&mut rng, &spec.shape, 1.0);
            Model::Quadratic {
                factors,
                center,
                centers: None,
            }
        }
    };
    let mut h = DefaultHasher::new();
    format!("{spec:?}").hash(&mut h);
    (horizon, batch, seed).hash(&mut h);
    Ok(OnlineProblem {
        spec: spec.clone(),
        horizon,
        batch,
        seed,
        model,
        fingerprint: h.finish(),
    })
}

/// Spread per mode such that the product over modes with extent > 1 is `total`.
fn mode_spread(extents: &[usize], total: f64) -> f64 {
    let active = extents.iter().filter(|&&n| n > 1).count();
    if active == 0 {
        1.0
    } else {
        total.powf(1.0 / active as f64)
    }
}

/// `n` values falling geometrically from 1 to `1/spread`.
fn geometric(n: usize, spread: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|j| spread.powf(-(j as f64) / (n - 1) as f64))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * normal(rng)).expect("validated shape")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::new(rows, cols, data).expect("sized buffer")
}

/// Random `n x r` matrix with orthonormal columns (Gram-Schmidt, two passes).
pub(crate) fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, &ci)| *x -= d * ci);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = Matrix::zeros(n, r);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            m.set(i, j, x);
        }
    }
    m
}

/// `Q diag(spectrum) Q^T` for a random orthogonal `Q`; exactly `I` when flat.
fn spd_with_spectrum(rng: &mut ChaCha8Rng, spectrum: &[f64]) -> Matrix {
    let n = spectrum.len();
    let q = orthonormal_columns(rng, n, n);
    if spectrum.iter().all(|&s| s == 1.0) {
        return Matrix::identity(n);
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n)
                .map(|l| q.get(i, l) * spectrum[l] * q.get(j, l))
                .sum();
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// `<T, v^1 o ... o v^k>` by folding the trailing mode first.
fn multilinear(t: &[f64], shape: &[usize], vecs: &[Vec<f64>]) -> f64 {
    let mut cur = t.to_vec();
    for (n, v) in shape.iter().zip(vecs).rev() {
        cur = cur
            .chunks(*n)
            .map(|c| c.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
    }
    cur[0]
}

fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|x| x / s).collect(), m + s.ln())
}

impl OnlineProblem {
    /// `f_t(W) = 1/2 ||W - C_t||_F^2` with the given centers; `T` = number of centers.
    pub fn isotropic_quadratic(centers: Vec<Tensor>) -> Result<Self> {
        let first = centers
            .first()
            .ok_or_else(|| Error::InvalidConfig("need at least one center".into()))?;
        let shape = first.shape().to_vec();
        if let Some(c) = centers.iter().find(|c| c.shape() != shape.as_slice()) {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: c.shape().to_vec(),
            });
        }
        let mut h = DefaultHasher::new();
        shape.hash(&mut h);
        for c in &centers {
            c.data().iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        let spec = ProblemSpec::new(LossFamily::Quadratic, &shape).with_noise(0.0);
        Ok(Self {
            horizon: centers.len(),
            batch: 1,
            seed: 0,
            model: Model::Quadratic {
                factors: shape.iter().map(|&n| Matrix::identity(n)).collect(),
                center: Tensor::zeros(&shape)?,
                centers: Some(centers),
            },
            spec,
            fingerprint: h.finish(),
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn shape(&self) -> &[usize] {
        &self.spec.shape
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Identity used to match comparators to problems.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Kronecker factors of the Hessian, for the quadratic family.
    pub fn hessian_factors(&self) -> Option<&[Matrix]> {
        match &self.model {
            Model::Quadratic { factors, .. } => Some(factors),
            _ => None,
        }
    }

    /// Planted parameter of the regression families, in full coordinates.
    pub fn planted(&self) -> Option<Tensor> {
        match &self.model {
            Model::Regression {
                bases,
                planted_reduced,
                ..
            } => Some(lift(planted_reduced, bases)),
            Model::Logistic { planted, .. } => Some(planted.to_tensor()),
            Model::Quadratic { .. } => None,
        }
    }

    /// Per-mode bounds on `rank(mat_i(G_t))` that hold by construction.
    pub fn certified_ranks(&self) -> Vec<usize> {
        let shape = &self.spec.shape;
        let ranks = self.spec.ranks();
        let b = self.batch;
        match self.spec.family {
            LossFamily::MatrixLeastSquares | LossFamily::TensorRegression => (0..ranks.len())
                .map(|i| {
                    let rest: usize = ranks
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, &r)| r)
                        .product();
                    b.min(ranks[i]).min(rest)
                })
                .collect(),
            LossFamily::MulticlassLogistic => {
                let r = b.min(shape[0] - 1).min(ranks[1]);
                vec![r, r]
            }
            LossFamily::Quadratic => {
                let n: usize = shape.iter().product();
                shape.iter().map(|&ni| ni.min(n / ni)).collect()
            }
        }
    }

    /// `r = (prod_i r_i)^(1/k)` from the certified ranks.
    pub fn bound_rank(&self) -> f64 {
        let r = self.certified_ranks();
        let k = r.len() as f64;
        (r.iter().map(|&x| (x as f64).ln()).sum::<f64>() / k).exp()
    }

    fn round_rng(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }

    fn check_round(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::RoundOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    fn regression_batch(
        &self,
        t: usize,
        scales: &[Vec<f64>],
        planted: &Tensor,
    ) -> Vec<RegressionExample> {
        let mut rng = self.round_rng(t);
        (0..self.batch)
            .map(|_| {
                let factors: Vec<Vec<f64>> = scales
                    .iter()
                    .map(|s| s.iter().map(|&si| si * normal(&mut rng)).collect())
                    .collect();
                let clean = multilinear(planted.data(), planted.shape(), &factors);
                RegressionExample {
                    target: clean + self.spec.noise * normal(&mut rng),
                    factors,
                }
            })
            .collect()
    }

    fn logistic_batch(
        &self,
        t: usize,
        basis: &Matrix,
        scales: &[f64],
        planted: &Matrix,
    ) -> Vec<(Vec<f64>, usize)> {
        let mut rng = self.round_rng(t);
        (0..self.batch)
            .map(|_| {
                let z: Vec<f64> = scales.iter().map(|&s| s * normal(&mut rng)).collect();
                let x = basis.matvec(&z).expect("basis columns match");
                let (p, _) = softmax(&planted.matvec(&x).expect("planted cols match"));
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let label = p
                    .iter()
                    .position(|&pi| {
                        acc += pi;
                        u < acc
                    })
                    .unwrap_or(p.len() - 1);
                (x, label)
            })
            .collect()
    }

    fn quadratic_center(&self, t: usize, center: &Tensor, centers: &Option<Vec<Tensor>>) -> Tensor {
        if let Some(cs) = centers {
            return cs[t - 1].clone();
        }
        let mut rng = self.round_rng(t);
        let mut c = center.clone();
        let w = self.spec.noise / self.batch as f64;
        for _ in 0..self.batch {
            c.data_mut()
                .iter_mut()
                .for_each(|x| *x += w * normal(&mut rng));
        }
        c
    }

    /// Loss and gradient of round `t` (1-based) at `w`.
    pub fn loss_and_grad(&self, t: usize, w: &Tensor) -> Result<(f64, Tensor)> {
        self.check_round(t)?;
        if w.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_vec(),
                actual: w.shape().to_vec(),
            });
        }
        let b = self.batch as f64;
        match &self.model {
            Model::Regression {
                bases,
                scales,
                planted_reduced,
            } => {
                let mut loss = 0.0;
                let mut grad = Tensor::zeros(self.shape())?;
                for ex in self.regression_batch(t, scales, planted_reduced) {
                    let u: Vec<Vec<f64>> = bases
                        .iter()
                        .zip(&ex.factors)
                        .map(|(u, a)| u.matvec(a).expect("factor length"))
                        .collect();
                    let res = multilinear(w.data(), w.shape(), &u) - ex.target;
                    loss += 0.5 * res * res;
                    let refs: Vec<&[f64]> = u.iter().map(|v| v.as_slice()).collect();
                    grad.axpy(res, &outer(&refs)?)?;
                }
                Ok((loss / b, grad.scale(1.0 / b)))
            }
            Model::Logistic {
                basis,
                scales,
                planted,
            } => {
                let wm = Matrix::from_tensor(w)?;
                let mut loss = 0.0;
                let mut grad = Matrix::zeros(wm.rows(), wm.cols());
                for (x, y) in self.logistic_batch(t, basis, scales, planted) {
                    logistic_term(&wm, &x, y, &mut loss, &mut grad);
                }
                Ok((loss / b, grad.scale(1.0 / b).into_tensor()))
            }
            Model::Quadratic {
                factors,
                center,
                centers,
            } => {
                let d = w.sub(&self.quadratic_center(t, center, centers))?;
                let hd = apply_modes(&d, factors)?;
                Ok((0.5 * d.dot(&hd)?, hd))
            }
        }
    }

    pub fn loss(&self, t: usize, w: &Tensor) -> Result<f64> {
        Ok(self.loss_and_grad(t, w)?.0)
    }

    /// `sum_t f_t(w)` over the whole horizon.
    pub fn total_loss(&self, w: &Tensor) -> Result<f64> {
        (1..=self.horizon).map(|t| self.loss(t, w)).sum()
    }

    /// Offline minimizer of `sum_t f_t` over the full horizon.
    pub fn solve_offline(&self) -> Result<Comparator> {
        let w_star = match &self.model {
            Model::Regression {
                bases,
                scales,
                planted_reduced,
            } => {
                let reduced_shape: Vec<usize> = scales.iter().map(|s| s.len()).collect();
                let dim: usize = reduced_shape.iter().product();
                let mut gram = vec![0.0; dim * dim];
                let mut rhs = vec![0.0; dim];
                for t in 1..=self.horizon {
                    for ex in self.regression_batch(t, scales, planted_reduced) {
                        let refs: Vec<&[f64]> = ex.factors.iter().map(|v| v.as_slice()).collect();
                        let x = outer(&refs)?.into_data();
                        for i in 0..dim {
                            rhs[i] += ex.target * x[i];
                            for j in 0..=i {
                                gram[i * dim + j] += x[i] * x[j];
                            }
                        }
                    }
                }
                for i in 0..dim {
                    for j in 0..i {
                        gram[j * dim + i] = gram[i * dim + j];
                    }
                }
                let sol = pseudo_solve(&SymMatrix::new(dim, gram)?, &rhs)?;
                lift(&Tensor::new(reduced_shape, sol)?, bases)
            }
            Model::Logistic {
                basis,
                scales,
                planted,
            } => {
                let data: Vec<(Vec<f64>, usize)> = (1..=self.horizon)
                    .flat_map(|t| self.logistic_batch(t, basis, scales, planted))
                    .collect();
                let (c, d) = (self.shape()[0], self.shape()[1]);
                let (w, obj) = logistic_descent(&data, Matrix::zeros(c, d))?;
                let mut rng = self.round_rng(0);
                rng.set_stream(u64::MAX);
                let (_, obj2) = logistic_descent(&data, gaussian_matrix(&mut rng, c, d, 0.5))?;
                if (obj - obj2).abs() > RESTART_AGREEMENT * obj.abs().max(1.0) {
                    return Err(Error::SolverStalled {
                        iterations: OFFLINE_MAX_ITERS,
                        grad_norm: (obj - obj2).abs(),
                    });
                }
                w.into_tensor()
            }
            Model::Quadratic {
                center, centers, ..
            } => {
                if self.horizon == 0 {
                    Tensor::zeros(self.shape())?
                } else {
                    let mut sum = Tensor::zeros(self.shape())?;
                    for t in 1..=self.horizon {
                        sum.axpy(1.0, &self.quadratic_center(t, center, centers))?;
                    }
                    sum.scale(1.0 / self.horizon as f64)
                }
            }
        };
        Ok(Comparator {
            objective: self.total_loss(&w_star)?,
            w_star,
            d: None,
            d_inf: None,
            fingerprint: self.fingerprint,
        })
    }
}

/// Full-coordinate tensor `reduced x_1 U_1 ... x_k U_k`.
fn lift(reduced: &Tensor, bases: &[Matrix]) -> Tensor {
    bases
        .iter()
        .enumerate()
        .fold(reduced.clone(), |acc, (i, u)| {
            acc.mode_product(i, u).expect("basis fits mode")
        })
}

fn apply_modes(t: &Tensor, factors: &[Matrix]) -> Result<Tensor> {
    factors
        .iter()
        .enumerate()
        .try_fold(t.clone(), |acc, (i, p)| acc.mode_product(i, p))
}

/// Minimum-norm solution of `a x = b` with eigenvalues below `1e-12 lambda_max` dropped.
fn pseudo_solve(a: &SymMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let eig = sym_eig(a)?;
    let cut = 1e-12 * eig.max().max(0.0);
    let n = b.len();
    let mut x = vec![0.0; n];
    for (j, &lam) in eig.values.iter().enumerate() {
        if lam <= cut || lam <= 0.0 {
            continue;
        }
        let coef: f64 = (0..n).map(|i| eig.vectors.get(i, j) * b[i]).sum::<f64>() / lam;
        for i in 0..n {
            x[i] += coef * eig.vectors.get(i, j);
        }
    }
    Ok(x)
}

fn logistic_term(w: &Matrix, x: &[f64], y: usize, loss: &mut f64, grad: &mut Matrix) {
    let logits = w.matvec(x).expect("feature length");
    let (p, lse) = softmax(&logits);
    *loss += lse - logits[y];
    for (c, &pc) in p.iter().enumerate() {
        let coef = pc - if c == y { 1.0 } else { 0.0 };
        for (j, &xj) in x.iter().enumerate() {
            let g = grad.get(c, j) + coef * xj;
            grad.set(c, j, g);
        }
    }
}

fn logistic_mean(data: &[(Vec<f64>, usize)], w: &Matrix) -> (f64, Matrix) {
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    for (x, y) in data {
        logistic_term(w, x, *y, &mut loss, &mut grad);
    }
    let n = data.len().max(1) as f64;
    (loss / n, grad.scale(1.0 / n))
}

/// Gradient descent on the mean objective. Step lengths follow Barzilai-Borwein
/// and are cut back until the Armijo condition holds.
fn logistic_descent(data: &[(Vec<f64>, usize)], mut w: Matrix) -> Result<(Matrix, f64)> {
    let mut step = 1.0;
    let (mut f, mut g) = logistic_mean(data, &w);
    for _ in 0..OFFLINE_MAX_ITERS {
        let gn2: f64 = g.data().iter().map(|x| x * x).sum();
        if gn2.sqrt() <= OFFLINE_GRAD_TOL {
            return Ok((w, f));
        }
        let (trial, ft, gt) = loop {
            let trial = w.sub(&g.scale(step))?;
            let (ft, gt) = logistic_mean(data, &trial);
            // Near the optimum the required decrease drops below the
            // resolution of `f`; a change within roundoff is accepted.
            let flat = (ft - f).abs() <= 4.0 * f64::EPSILON * f.abs().max(1.0);
            if ft <= f - 1e-4 * step * gn2 || flat || step < 1e-12 {
                break (trial, ft, gt);
            }
            step *= 0.5;
        };
        let s = trial.sub(&w)?;
        let y = gt.sub(&g)?;
        let sy: f64 = s.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let ss: f64 = s.data().iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).min(1e6)
        } else {
            step * 2.0
        };
        w = trial;
        f = ft;
        g = gt;
    }
    Err(Error::SolverStalled {
        iterations: OFFLINE_MAX_ITERS,
        grad_norm: g.frobenius_norm(),
    })
}

/// Offline comparator `W*` with the trajectory radii the harness fills in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparator {
    pub w_star: Tensor,
    /// `sum_t f_t(W*)`.
    pub objective: f64,
    /// `max_t ||W_t - W*||_F`.
    pub d: Option<f64>,
    /// `max_t ||W_t - W*||_inf`.
    pub d_inf: Option<f64>,
    pub fingerprint: u64,
}

impl Comparator {
    /// Records `D` and `D_inf` for a trajectory `W_1..W_T`.
    pub fn measure<'a>(&mut self, trajectory: impl IntoIterator<Item = &'a Tensor>) -> Result<()> {
        let (mut d, mut d_inf) = (0.0f64, 0.0f64);
        for w in trajectory {
            let diff = w.sub(&self.w_star)?;
            d = d.max(diff.frobenius_norm());
            d_inf = d_inf.max(diff.max_abs());
        }
        self.d = Some(d);
        self.d_inf = Some(d_inf);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::numerical_rank;
    use crate::tensor::kron_all;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .unwrap()
            .into_tensor()
    }

    #[test]
    fn rerun_is_bit_identical() {
        let spec = ProblemSpec::new(LossFamily::MatrixLeastSquares, &[4, 3]);
        let a = make_problem(&spec, 10, 4, 7).unwrap();
        let b = make_problem(&spec, 10, 4, 7).unwrap();
        let w = Tensor::from_fn(&[4, 3], |i| (i[0] as f64) - 0.5 * i[1] as f64).unwrap();
        for t in 1..=10 {
            let (la, ga) = a.loss_and_grad(t, &w).unwrap();
            let (lb, gb) = b.loss_and_grad(t, &w).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
            assert!(ga
                .data()
                .iter()
                .zip(gb.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = make_problem(&spec, 10, 4, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unit_ranks_give_outer_product_gradients() {
        let spec = ProblemSpec::new(LossFamily::MatrixLeastSquares, &[5, 4]).with_ranks(&[1, 1]);
        let p = make_problem(&spec, 20, 8, 3).unwrap();
        assert_eq!(p.certified_ranks(), vec![1, 1]);
        let w = Tensor::zeros(&[5, 4]).unwrap();
        for t in 1..=20 {
            let g = p.loss_and_grad(t, &w).unwrap().1;
            let sv = crate::psd::singular_values(&Matrix::from_tensor(&g).unwrap()).unwrap();
            assert!(sv[1] <= 1e-10 * sv[0]);
            assert_eq!(
                numerical_rank(&Matrix::from_tensor(&g).unwrap(), 1e-10).unwrap(),
                1
            );
        }
    }

    #[test]
    fn quadratic_condition_number_is_exact() {
        let spec = ProblemSpec::new(LossFamily::Quadratic, &[4, 3]).with_condition(100.0);
        let p = make_problem(&spec, 5, 2, 11).unwrap();
        let h = kron_all(p.hessian_factors().unwrap());
        let eig = sym_eig(&SymMatrix::symmetrize(&h).unwrap()).unwrap();
        assert!(
            (eig.max() / eig.min() - 100.0).abs() <= 1e-6,
            "{}",
            eig.max() / eig.min()
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let zero = ProblemSpec::new(LossFamily::TensorRegression, &[3, 0]);
        assert!(make_problem(&zero, 1, 1, 0).is_err());
        let big_rank =
            ProblemSpec::new(LossFamily::MatrixLeastSquares, &[3, 2]).with_ranks(&[4, 1]);
        assert!(make_problem(&big_rank, 1, 1, 0).is_err());
        let order3 = ProblemSpec::new(LossFamily::MatrixLeastSquares, &[3, 2, 2]);
        assert!(make_problem(&order3, 1, 1, 0).is_err());
        let p = make_problem(&ProblemSpec::new(LossFamily::Quadratic, &[2]), 3, 1, 0).unwrap();
        assert!(matches!(
            p.loss_and_grad(4, &Tensor::zeros(&[2]).unwrap()),
            Err(Error::RoundOutOfRange { t: 4, horizon: 3 })
        ));
        assert!(p.loss_and_grad(0, &Tensor::zeros(&[2]).unwrap()).is_err());
    }

    #[test]
    fn noiseless_least_squares_recovers_plant() {
        let spec = ProblemSpec::new(LossFamily::MatrixLeastSquares, &[4, 3])
            .with_condition(10.0)
            .with_noise(0.0);
        let p = make_problem(&spec, 30, 4, 5).unwrap();
        let cmp = p.solve_offline().unwrap();
        let planted = p.planted().unwrap();
        let err = cmp.w_star.sub(&planted).unwrap().frobenius_norm();
        assert!(err <= 1e-8, "{err}");
        let g = p.loss_and_grad(7, &cmp.w_star).unwrap().1;
        assert!(g.max_abs() <= 1e-9);
    }

    #[test]
    fn half_frobenius_gradient_is_identity_map() {
        let zero = Tensor::zeros(&[2, 2]).unwrap();
        let p = OnlineProblem::isotropic_quadratic(vec![zero]).unwrap();
        let w = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let (loss, g) = p.loss_and_grad(1, &w).unwrap();
        assert_eq!(g, w);
        assert_eq!(loss, 15.0);
    }

    #[test]
    fn quadratic_comparators() {
        let a = t2(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let b = t2(&[&[3.0, 0.0], &[-0.5, 1.0]]);
        let one = OnlineProblem::isotropic_quadratic(vec![a.clone()]).unwrap();
        assert_eq!(one.solve_offline().unwrap().w_star, a);
        let two = OnlineProblem::isotropic_quadratic(vec![a.clone(), b.clone()]).unwrap();
        let mid = a.add(&b).unwrap().scale(0.5);
        let cmp = two.solve_offline().unwrap();
        assert!(cmp.w_star.sub(&mid).unwrap().max_abs() < 1e-15);
        assert!((cmp.objective - two.total_loss(&mid).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn logistic_offline_solution_is_stationary() {
        let spec = ProblemSpec::new(LossFamily::MulticlassLogistic, &[3, 4]).with_ranks(&[3, 3]);
        let p = make_problem(&spec, 20, 8, 2).unwrap();
        let cmp = p.solve_offline().unwrap();
        let mut g = Tensor::zeros(&[3, 4]).unwrap();
        for t in 1..=20 {
            g.axpy(1.0 / 20.0, &p.loss_and_grad(t, &cmp.w_star).unwrap().1)
                .unwrap();
        }
        assert!(g.frobenius_norm() <= 1e-9, "{}", g.frobenius_norm());
        assert_eq!(p.certified_ranks(), vec![2, 2]);
    }

    #[test]
    fn tensor_regression_ranks_hold() {
        let spec =
            ProblemSpec::new(LossFamily::TensorRegression, &[4, 3, 3]).with_ranks(&[2, 3, 1]);
        let p = make_problem(&spec, 15, 16, 9).unwrap();
        let certified = p.certified_ranks();
        assert_eq!(certified, vec![2, 2, 1]);
        let w = Tensor::from_fn(&[4, 3, 3], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f64 * 0.1).unwrap();
        for t in 1..=15 {
            let g = p.loss_and_grad(t, &w).unwrap().1;
            for (mode, &r) in certified.iter().enumerate() {
                let rank = numerical_rank(&g.matricize(mode).unwrap(), 1e-10).unwrap();
                assert!(rank <= r, "mode {mode}: {rank} > {r}");
            }
        }
    }
}
