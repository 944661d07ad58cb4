//! Randomized checks of the Kronecker/vec identities, the Loewner-order
//! inequalities behind the regret analysis, and the regret bounds themselves.
//!
//! Every suite is a pure function of its seed. Failures are report entries,
//! never errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerSpec, OutputConfig, VerifyConfig};
use super::run::{dominance_slack, run, BoundReport, BOUND_SLACK_TOL};
use crate::error::Result;
use crate::optimizer::ShampooConfig;
use crate::optimizer::ShampooState;
use crate::problems::{orthonormal_columns, LossFamily, ProblemSpec};
use crate::psd::{loewner_slack, matrix_power, SymMatrix};
use crate::tensor::{kron, kron_all, outer, DenseMatrix, DenseTensor};

type Matrix = DenseMatrix<f64>;
type Tensor = DenseTensor<f64>;
type Sym = SymMatrix<f64>;

pub const IDENTITY_TOL: f64 = 1e-10;
pub const LOEWNER_TOL: f64 = 1e-7;
pub const MONOTONE_TOL: f64 = 1e-8;
pub const ROUND_TRIP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Largest `||lhs - rhs||_F / max(||rhs||_F, 1)`; must stay at or below the threshold.
    MaxRelError,
    /// Smallest normalized `lambda_min(A - B)`; must stay at or above the threshold.
    MinSlack,
    /// Count of disagreeing predicate pairs; must be zero.
    Disagreements,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub metric: Metric,
    pub trials: usize,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckEntry {
    fn new(name: &str, metric: Metric, trials: usize, worst: f64, threshold: f64) -> Self {
        let pass = match metric {
            Metric::MaxRelError => worst <= threshold,
            Metric::MinSlack => worst >= threshold,
            Metric::Disagreements => worst == 0.0,
        };
        Self {
            name: name.to_string(),
            metric,
            trials,
            worst,
            threshold,
            pass,
        }
    }

    /// `PASS name (trials, worst vs threshold)`.
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} trials={:<5} worst={:+.3e} threshold={:+.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.worst,
            self.threshold
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub entries: Vec<CheckEntry>,
    #[serde(default)]
    pub bounds: Vec<BoundReport>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn rand_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::new(m, n, rand_vec(rng, m * n)).expect("sized")
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng)).expect("positive extents")
}

fn dim(rng: &mut ChaCha8Rng, max: usize) -> usize {
    rng.random_range(1..=max)
}

/// `Q diag(lambda) Q^T` with eigenvalues drawn log-uniformly from `[lo, hi]`.
fn rand_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Sym {
    let q = orthonormal_columns(rng, n, n);
    let lam: Vec<f64> = (0..n)
        .map(|_| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp())
        .collect();
    let mut d = q.clone();
    for i in 0..n {
        for j in 0..n {
            d.set(i, j, q.get(i, j) * lam[j]);
        }
    }
    Sym::symmetrize(&d.matmul(&q.transpose()).expect("square")).expect("square")
}

/// `B B^T` with `B` of shape `n x rank`.
fn rand_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Sym {
    let b = rand_matrix(rng, n, rank);
    Sym::symmetrize(&b.matmul(&b.transpose()).expect("conformable")).expect("square")
}

/// Random `m x n` matrix of rank at most `r`.
fn rand_low_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> Matrix {
    rand_matrix(rng, m, r)
        .matmul(&rand_matrix(rng, r, n))
        .expect("conformable")
}

fn rel_err(lhs: &[f64], rhs: &[f64]) -> f64 {
    let diff: f64 = lhs
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    if lhs.len() != rhs.len() {
        return f64::INFINITY;
    }
    diff / scale.max(1.0)
}

fn sym(m: &Matrix) -> Sym {
    Sym::symmetrize(m).expect("square")
}

fn pow(a: &Sym, alpha: f64) -> Result<Sym> {
    matrix_power(a, alpha)
}

/// Runs `trials` draws of `check` and keeps the worst value.
fn sweep(
    trials: usize,
    rng: &mut ChaCha8Rng,
    metric: Metric,
    mut check: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> f64 {
    let mut worst = match metric {
        Metric::MaxRelError | Metric::Disagreements => 0.0,
        Metric::MinSlack => f64::INFINITY,
    };
    for _ in 0..trials {
        let v = check(rng).unwrap_or(f64::NAN);
        worst = match metric {
            Metric::MaxRelError => {
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    worst.max(v)
                }
            }
            Metric::Disagreements => worst + if v.is_nan() { 1.0 } else { v },
            Metric::MinSlack => {
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    worst.min(v)
                }
            }
        };
    }
    worst
}

/// Kronecker-product and vec/matricization identities.
pub fn kron_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut entries = Vec::new();
    let mut add = |id: u64,
                   name: &str,
                   metric: Metric,
                   threshold: f64,
                   check: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>| {
        let mut rng = stream(seed, id);
        let worst = sweep(trials, &mut rng, metric, check);
        entries.push(CheckEntry::new(name, metric, trials, worst, threshold));
    };
    let rel = Metric::MaxRelError;

    add(1, "kron-mixed-product", rel, IDENTITY_TOL, &mut |r| {
        let (m, n, p, q, s, u) = (
            dim(r, 6),
            dim(r, 6),
            dim(r, 6),
            dim(r, 6),
            dim(r, 6),
            dim(r, 6),
        );
        let (a, a2) = (rand_matrix(r, m, n), rand_matrix(r, n, p));
        let (b, b2) = (rand_matrix(r, q, s), rand_matrix(r, s, u));
        let lhs = kron(&a, &b).matmul(&kron(&a2, &b2))?;
        let rhs = kron(&a.matmul(&a2)?, &b.matmul(&b2)?);
        Ok(rel_err(lhs.data(), rhs.data()))
    });
    add(2, "kron-transpose", rel, IDENTITY_TOL, &mut |r| {
        let (m, n, p, q) = (dim(r, 6), dim(r, 6), dim(r, 6), dim(r, 6));
        let (a, b) = (rand_matrix(r, m, n), rand_matrix(r, p, q));
        Ok(rel_err(
            kron(&a, &b).transpose().data(),
            kron(&a.transpose(), &b.transpose()).data(),
        ))
    });
    add(3, "kron-power", rel, IDENTITY_TOL, &mut |r| {
        let (m, n) = (dim(r, 6), dim(r, 6));
        let (a, b) = (rand_spd(r, m, 0.5, 2.0), rand_spd(r, n, 0.5, 2.0));
        let s = if r.random::<bool>() {
            -1.0
        } else {
            r.random_range(-2.0..2.0)
        };
        let lhs = pow(&sym(&kron(&a.to_dense(), &b.to_dense())), s)?;
        let rhs = kron(&pow(&a, s)?.to_dense(), &pow(&b, s)?.to_dense());
        Ok(rel_err(lhs.data(), rhs.data()))
    });
    add(
        4,
        "kron-monotone",
        Metric::MinSlack,
        -IDENTITY_TOL,
        &mut |r| {
            let (m, n) = (dim(r, 6), dim(r, 6));
            let ranks = [dim(r, m), dim(r, n), dim(r, m), dim(r, n)];
            let a2 = rand_psd(r, m, ranks[0]);
            let b2 = rand_psd(r, n, ranks[1]);
            let a = a2.add(&rand_psd(r, m, ranks[2]))?;
            let b = b2.add(&rand_psd(r, n, ranks[3]))?;
            let big = sym(&kron(&a.to_dense(), &b.to_dense()));
            let small = sym(&kron(&a2.to_dense(), &b2.to_dense()));
            loewner_slack(&big, &small)
        },
    );
    add(5, "kron-trace", rel, IDENTITY_TOL, &mut |r| {
        let (m, n) = (dim(r, 6), dim(r, 6));
        let (a, b) = (rand_matrix(r, m, m), rand_matrix(r, n, n));
        Ok(rel_err(&[kron(&a, &b).trace()], &[a.trace() * b.trace()]))
    });
    add(6, "vec-outer-kron", rel, IDENTITY_TOL, &mut |r| {
        let (m, n) = (dim(r, 6), dim(r, 6));
        let (u, v) = (rand_vec(r, m), rand_vec(r, n));
        let uv = Matrix::column(&u).matmul(&Matrix::column(&v).transpose())?;
        let uk = kron(&Matrix::column(&u), &Matrix::column(&v));
        Ok(rel_err(uv.vec(), uk.data()))
    });
    add(7, "vec-kron-matrix", rel, IDENTITY_TOL, &mut |r| {
        let (m, n) = (dim(r, 6), dim(r, 6));
        let (g, l, rm) = (
            rand_matrix(r, m, n),
            rand_matrix(r, m, m),
            rand_matrix(r, n, n),
        );
        let lhs = kron(&l, &rm.transpose()).matvec(g.vec())?;
        let rhs = l.matmul(&g)?.matmul(&rm)?;
        Ok(rel_err(&lhs, rhs.vec()))
    });
    add(8, "vec-kron-tensor", rel, IDENTITY_TOL, &mut |r| {
        let shape = [dim(r, 6), dim(r, 6), dim(r, 6)];
        let g = rand_tensor(r, &shape);
        let ms: Vec<Matrix> = shape.iter().map(|&n| rand_matrix(r, n, n)).collect();
        let lhs = kron_all(&ms).matvec(g.vec())?;
        let rhs = ms
            .iter()
            .enumerate()
            .try_fold(g, |acc, (i, m)| acc.mode_product(i, m))?;
        Ok(rel_err(&lhs, rhs.vec()))
    });
    add(9, "outer-vec", rel, IDENTITY_TOL, &mut |r| {
        let k = dim(r, 4);
        let us: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = dim(r, 6);
                rand_vec(r, n)
            })
            .collect();
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        let cols: Vec<Matrix> = us.iter().map(|u| Matrix::column(u)).collect();
        Ok(rel_err(outer(&refs)?.vec(), kron_all(&cols).data()))
    });
    add(10, "outer-matricize", rel, IDENTITY_TOL, &mut |r| {
        let k = dim(r, 4);
        let us: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = dim(r, 6);
                rand_vec(r, n)
            })
            .collect();
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        let i = r.random_range(0..k);
        let rest: Vec<Matrix> = (0..k)
            .filter(|&j| j != i)
            .map(|j| Matrix::column(&us[j]))
            .collect();
        let rest = if rest.is_empty() {
            Matrix::identity(1)
        } else {
            kron_all(&rest)
        };
        let rhs = Matrix::column(&us[i]).matmul(&rest.transpose())?;
        Ok(rel_err(outer(&refs)?.matricize(i)?.data(), rhs.data()))
    });
    add(11, "vec-matricize", rel, IDENTITY_TOL, &mut |r| {
        let k = dim(r, 4);
        let shape: Vec<usize> = (0..k).map(|_| dim(r, 6)).collect();
        let a = rand_tensor(r, &shape);
        let first = rel_err(a.matricize(0)?.vec(), a.vec());
        let last = rel_err(a.matricize(k - 1)?.transpose().vec(), a.vec());
        Ok(first.max(last))
    });
    add(12, "matricize-mode-product", rel, IDENTITY_TOL, &mut |r| {
        let k = dim(r, 4);
        let shape: Vec<usize> = (0..k).map(|_| dim(r, 6)).collect();
        let a = rand_tensor(r, &shape);
        let i = r.random_range(0..k);
        let rows = dim(r, 6);
        let m = rand_matrix(r, rows, shape[i]);
        let lhs = a.mode_product(i, &m)?.matricize(i)?;
        let rhs = m.matmul(&a.matricize(i)?)?;
        Ok(rel_err(lhs.data(), rhs.data()))
    });

    SuiteReport {
        suite: "kron".into(),
        seed,
        entries,
        bounds: Vec::new(),
    }
}

fn ridge(n: usize, eps: f64) -> Sym {
    Sym::scaled_identity(n, eps)
}

/// Loewner-order inequalities, operator monotonicity and the power round trip.
/// `round_trip_trials` defaults to 200 when `None`.
pub fn loewner_suite(seed: u64, trials: usize, round_trip_trials: Option<usize>) -> SuiteReport {
    let mut entries = Vec::new();
    let mut add = |id: u64,
                   name: &str,
                   metric: Metric,
                   threshold: f64,
                   n: usize,
                   check: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>| {
        let mut rng = stream(seed, 100 + id);
        let worst = sweep(n, &mut rng, metric, check);
        entries.push(CheckEntry::new(name, metric, n, worst, threshold));
    };
    let slack = Metric::MinSlack;

    add(
        1,
        "rank-bound-left",
        slack,
        -LOEWNER_TOL,
        trials,
        &mut |r| {
            let (m, n) = (dim(r, 3), dim(r, 4));
            let rank = dim(r, m.min(n));
            let g = rand_low_rank(r, m, n, rank);
            let gg = sym(&g.transpose().matmul(&g)?);
            let rhs = sym(&kron(&Matrix::identity(m), &gg.to_dense()));
            loewner_slack(&rhs, &Sym::outer(g.vec()).scale(1.0 / rank as f64))
        },
    );
    add(
        2,
        "rank-bound-right",
        slack,
        -LOEWNER_TOL,
        trials,
        &mut |r| {
            let (m, n) = (dim(r, 3), dim(r, 4));
            let rank = dim(r, m.min(n));
            let g = rand_low_rank(r, m, n, rank);
            let gg = sym(&g.matmul(&g.transpose())?);
            let rhs = sym(&kron(&gg.to_dense(), &Matrix::identity(n)));
            loewner_slack(&rhs, &Sym::outer(g.vec()).scale(1.0 / rank as f64))
        },
    );
    add(
        3,
        "kron-root-bound",
        slack,
        -LOEWNER_TOL,
        trials,
        &mut |r| {
            let (m, n) = (dim(r, 3), dim(r, 4));
            let rank = dim(r, m.min(n));
            let eps = if r.random::<bool>() {
                0.0
            } else {
                r.random_range(1e-3..1.0)
            };
            let (mut left, mut right) = (ridge(m, eps), ridge(n, eps));
            let mut flat = ridge(m * n, eps);
            for _ in 0..dim(r, 30) {
                let g = rand_low_rank(r, m, n, rank);
                left = left.add(&sym(&g.matmul(&g.transpose())?))?;
                right = right.add(&sym(&g.transpose().matmul(&g)?))?;
                flat = flat.add(&Sym::outer(g.vec()).scale(1.0 / rank as f64))?;
            }
            let rhs = sym(&kron(
                &pow(&left, 0.5)?.to_dense(),
                &pow(&right, 0.5)?.to_dense(),
            ));
            loewner_slack(&rhs, &flat)
        },
    );
    add(
        4,
        "tensor-kron-bound",
        slack,
        -LOEWNER_TOL,
        trials,
        &mut |r| {
            let shape = [2usize, 3, 2];
            let n: usize = shape.iter().product();
            let terms = dim(r, 3);
            let ranks: Vec<usize> = shape.iter().map(|&ni| terms.min(ni).min(n / ni)).collect();
            let rr = ranks
                .iter()
                .map(|&x| x as f64)
                .product::<f64>()
                .powf(1.0 / 3.0);
            let eps = if r.random::<bool>() {
                0.0
            } else {
                r.random_range(1e-3..1.0)
            };
            let mut modes: Vec<Sym> = shape.iter().map(|&ni| ridge(ni, eps)).collect();
            let mut flat = ridge(n, eps);
            for _ in 0..dim(r, 30) {
                let mut g = Tensor::zeros(&shape)?;
                for _ in 0..terms {
                    let us: Vec<Vec<f64>> = shape.iter().map(|&ni| rand_vec(r, ni)).collect();
                    let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
                    g.axpy(1.0, &outer(&refs)?)?;
                }
                for (i, h) in modes.iter_mut().enumerate() {
                    *h = h.add(&g.contract(i)?)?;
                }
                flat = flat.add(&Sym::outer(g.vec()))?;
            }
            let roots: Vec<Matrix> = modes
                .iter()
                .map(|h| pow(h, 1.0 / 3.0).map(|p| p.to_dense()))
                .collect::<Result<_>>()?;
            loewner_slack(&sym(&kron_all(&roots)).scale(rr), &flat)
        },
    );
    add(
        5,
        "shampoo-dominance",
        slack,
        -LOEWNER_TOL,
        trials,
        &mut |r| {
            let (m, n) = (3usize, 4usize);
            let rank = dim(r, 3);
            let eps = r.random_range(1e-3..1.0);
            let mut state = ShampooState::<f64>::new(&[m, n], ShampooConfig::exact(0.1, eps))?;
            let mut sum = Sym::scaled_identity(m * n, 0.0);
            let mut worst = f64::INFINITY;
            for _ in 0..dim(r, 30) {
                let g = rand_low_rank(r, m, n, rank).into_tensor();
                state.step(&g)?;
                sum = sum.add(&Sym::outer(g.data()))?;
                worst = worst.min(dominance_slack(&state, &sum, rank as f64)?);
            }
            Ok(worst)
        },
    );
    add(
        6,
        "matricize-equivalence",
        Metric::Disagreements,
        0.0,
        trials,
        &mut |r| {
            let shape = [dim(r, 2), dim(r, 3), dim(r, 2)];
            let g = rand_tensor(r, &shape);
            let i = r.random_range(0..3);
            let ni = shape[i];
            let n: usize = shape.iter().product();
            // Scale a perturbed contraction so that both outcomes occur.
            let base = g.contract(i)?.add(&rand_psd(r, ni, 1).scale(0.1))?;
            let b = base.scale(r.random_range(0.05..2.0 * ni as f64));
            let gi = g.matricize(i)?;
            let lhs_a = sym(&kron(&b.to_dense(), &Matrix::identity(n / ni)));
            let pred_a = loewner_slack(&lhs_a, &Sym::outer(gi.vec()))? >= -LOEWNER_TOL;
            let before: usize = shape[..i].iter().product();
            let after: usize = shape[i + 1..].iter().product();
            let lhs_b = sym(&kron_all(&[
                Matrix::identity(before),
                b.to_dense(),
                Matrix::identity(after),
            ]));
            let pred_b = loewner_slack(&lhs_b, &Sym::outer(g.vec()))? >= -LOEWNER_TOL;
            Ok(if pred_a == pred_b { 0.0 } else { 1.0 })
        },
    );
    add(
        7,
        "geometric-mean-monotone",
        slack,
        -MONOTONE_TOL,
        trials,
        &mut |r| {
            let n = dim(r, 6);
            let count = r.random_range(2..=3);
            let q = orthonormal_columns(r, n, n);
            let p = orthonormal_columns(r, n, n);
            let weights: Vec<f64> = {
                let raw: Vec<f64> = (0..count).map(|_| r.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|w| w / s).collect()
            };
            // X_i share the basis q and Y_i share p, so each family commutes.
            let same = r.random::<bool>();
            // Equal families make the inequality tight.
            let equal = same && r.random_bool(0.25);
            let basis_y = if same { q.clone() } else { p };
            let mut lhs = Matrix::identity(n);
            let mut rhs = Matrix::identity(n);
            for &w in &weights {
                let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
                let (xm, ym) = if same {
                    let y: Vec<f64> = x
                        .iter()
                        .map(|&v| {
                            if equal {
                                v
                            } else {
                                v + r.random_range(0.0..2.0)
                            }
                        })
                        .collect();
                    (with_basis(&q, &x), with_basis(&basis_y, &y))
                } else {
                    // Across bases, Y_i >= X_i is forced by putting all of Y_i's
                    // spectrum above X_i's.
                    let top = x.iter().cloned().fold(0.0, f64::max);
                    let y: Vec<f64> = (0..n).map(|_| top + r.random_range(0.0..2.0)).collect();
                    (with_basis(&q, &x), with_basis(&basis_y, &y))
                };
                lhs = lhs.matmul(&pow(&xm, w)?.to_dense())?;
                rhs = rhs.matmul(&pow(&ym, w)?.to_dense())?;
            }
            loewner_slack(&sym(&rhs), &sym(&lhs))
        },
    );
    add(
        8,
        "power-monotone",
        slack,
        -MONOTONE_TOL,
        trials,
        &mut |r| {
            let n = dim(r, 6);
            let (rx, ry) = (dim(r, n), dim(r, n));
            let x = rand_psd(r, n, rx);
            let y = x.add(&rand_psd(r, n, ry))?;
            let alpha = if r.random::<bool>() { 0.25 } else { 0.5 };
            loewner_slack(&pow(&y, alpha)?, &pow(&x, alpha)?)
        },
    );
    add(
        9,
        "power-round-trip",
        Metric::MaxRelError,
        ROUND_TRIP_TOL,
        round_trip_trials.unwrap_or(200),
        &mut |r| {
            let n = dim(r, 50);
            let a = rand_spd(r, n, 1e-3, 1e3);
            let back = pow(&pow(&a, 0.25)?, 4.0)?;
            Ok(back.sub(&a)?.frobenius_norm() / a.frobenius_norm())
        },
    );

    SuiteReport {
        suite: "loewner".into(),
        seed,
        entries,
        bounds: Vec::new(),
    }
}

fn with_basis(q: &Matrix, diag: &[f64]) -> Sym {
    let n = diag.len();
    let mut d = q.clone();
    for i in 0..n {
        for j in 0..n {
            d.set(i, j, q.get(i, j) * diag[j]);
        }
    }
    sym(&d.matmul(&q.transpose()).expect("square"))
}

/// Configurations the bounds suite runs.
pub fn bound_configs(seed: u64) -> Vec<(String, ExperimentConfig)> {
    let base = |family, shape: &[usize], sc: ShampooConfig| ExperimentConfig {
        seed,
        horizon: 500,
        batch: 16,
        problem: ProblemSpec::new(family, shape).with_condition(10.0),
        optimizer: OptimizerSpec::Shampoo(sc),
        output: OutputConfig::default(),
        verify: VerifyConfig {
            bound_check: true,
            ..VerifyConfig::default()
        },
    };
    let exact = ShampooConfig::exact(1.0, 1e-4);
    vec![
        (
            "regret-matrix".into(),
            base(LossFamily::MatrixLeastSquares, &[8, 5], exact.clone()),
        ),
        (
            "regret-tensor".into(),
            base(LossFamily::TensorRegression, &[4, 3, 3], exact.clone()),
        ),
        (
            "regret-diagonal".into(),
            base(
                LossFamily::MatrixLeastSquares,
                &[8, 5],
                exact.all_diagonal(2),
            ),
        ),
    ]
}

/// Regret bounds under the two-pass step-size protocol.
pub fn bounds_suite(seed: u64) -> Result<SuiteReport> {
    let mut entries = Vec::new();
    let mut bounds = Vec::new();
    for (name, cfg) in bound_configs(seed) {
        let out = run(&cfg)?;
        let b = out.bound.expect("bound check enabled");
        let normalized = b.slack / b.bound.max(1.0);
        let mut e = CheckEntry::new(&name, Metric::MinSlack, 1, normalized, -BOUND_SLACK_TOL);
        e.pass = b.pass;
        entries.push(e);
        bounds.push(b);
    }
    Ok(SuiteReport {
        suite: "bounds".into(),
        seed,
        entries,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass_and_are_deterministic() {
        let a = kron_suite(3, 20);
        assert!(a.pass(), "{:#?}", a.entries);
        assert_eq!(a, kron_suite(3, 20));
        let b = loewner_suite(3, 20, Some(5));
        assert!(b.pass(), "{:#?}", b.entries);
        assert_eq!(b.entries.len(), 9);
    }

    #[test]
    fn failing_entries_are_reported() {
        let e = CheckEntry::new("x", Metric::MinSlack, 1, -1.0, -1e-7);
        assert!(!e.pass);
        assert!(e.line().starts_with("FAIL x"));
        assert!(CheckEntry::new("y", Metric::MaxRelError, 1, 1e-12, 1e-10).pass);
        assert!(!CheckEntry::new("z", Metric::Disagreements, 1, 1.0, 0.0).pass);
    }
}
