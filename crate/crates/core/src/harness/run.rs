use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerSpec};
use crate::baselines::BaselineState;
use crate::error::{Error, Result};
use crate::optimizer::{ModeVariant, Optimizer, ShampooState};
use crate::problems::{make_problem, Comparator, OnlineProblem};
use crate::psd::{loewner_slack, matrix_power, SymMatrix};
use crate::tensor::{kron_all, DenseMatrix, DenseTensor};

type Tensor = DenseTensor<f64>;

/// Relative slack allowed before a bound check fails.
pub const BOUND_SLACK_TOL: f64 = 1e-6;
/// Minimum Loewner slack for the per-step dominance check.
pub const DOMINANCE_TOL: f64 = 1e-7;
/// Maximum relative gap between Shampoo and the flattened mirror.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

/// Which regret theorem a bound check evaluates. The serialized labels are
/// the identifiers used in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremId {
    /// Matrix Shampoo, full preconditioners, radius `D`.
    #[serde(rename = "thm-3.1")]
    MatrixFull,
    /// Tensor Shampoo of any order other than two, radius `D`.
    #[serde(rename = "thm-4.1")]
    TensorFull,
    /// Diagonal matrix Shampoo, entry-wise radius `D_inf`.
    #[serde(rename = "thm-A.1")]
    MatrixDiagonal,
}

impl TheoremId {
    pub fn label(self) -> &'static str {
        match self {
            TheoremId::MatrixFull => "thm-3.1",
            TheoremId::TensorFull => "thm-4.1",
            TheoremId::MatrixDiagonal => "thm-A.1",
        }
    }

    /// Picks the theorem matching the state's per-mode variants.
    pub fn for_state(state: &ShampooState<f64>) -> Result<Self> {
        let v = state.variants();
        if v.iter().all(|&x| x == ModeVariant::Full) {
            Ok(if v.len() == 2 {
                TheoremId::MatrixFull
            } else {
                TheoremId::TensorFull
            })
        } else if v.len() == 2 && v.iter().all(|&x| x == ModeVariant::Diagonal) {
            Ok(TheoremId::MatrixDiagonal)
        } else {
            Err(Error::InvalidConfig(format!(
                "no regret bound covers variants {v:?}"
            )))
        }
    }

    fn radius(self, d: f64, d_inf: f64) -> f64 {
        match self {
            TheoremId::MatrixDiagonal => d_inf,
            _ => d,
        }
    }
}

/// JSON has no non-finite numbers; serde_json writes them as `null`, read back as NaN.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One round of telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    /// `f_t(W_t)`.
    #[serde(deserialize_with = "nullable_f64")]
    pub loss: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub cum_loss: f64,
    /// `R_t` against the full-horizon comparator.
    #[serde(deserialize_with = "nullable_f64")]
    pub regret: f64,
    /// Theorem right-hand side with statistics and radius up to `t`.
    pub bound: Option<f64>,
    pub wall_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: TheoremId,
    pub regret: f64,
    pub bound: f64,
    pub slack: f64,
    /// `(prod_i r_i)^(1/k)` from the certified ranks.
    pub r: f64,
    /// `D` or `D_inf`, whichever the theorem uses.
    pub radius: f64,
    pub learning_rate: f64,
    /// `(radius^2 / 2 eta + eta r) * prod_i tr(H_i^(1/2k))`, valid for the `eta` actually used.
    pub bound_at_step_size: f64,
    pub passes: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Either kind of optimizer behind one stepping interface.
#[derive(Clone, Debug)]
pub enum Learner {
    Shampoo(ShampooState<f64>),
    Baseline(BaselineState<f64>),
}

impl Learner {
    pub fn new(spec: &OptimizerSpec, shape: &[usize]) -> Result<Self> {
        match (spec, spec.baseline_kind()) {
            (OptimizerSpec::Shampoo(cfg), _) => {
                Ok(Learner::Shampoo(ShampooState::new(shape, cfg.clone())?))
            }
            (OptimizerSpec::Sgd(cfg), Some(kind))
            | (OptimizerSpec::AdagradDiag(cfg), Some(kind))
            | (OptimizerSpec::Adam(cfg), Some(kind))
            | (OptimizerSpec::AdagradFull(cfg), Some(kind)) => Ok(Learner::Baseline(
                BaselineState::new(kind, shape, cfg.clone())?,
            )),
            _ => unreachable!("baseline specs always carry a kind"),
        }
    }

    pub fn shampoo(&self) -> Option<&ShampooState<f64>> {
        match self {
            Learner::Shampoo(s) => Some(s),
            Learner::Baseline(_) => None,
        }
    }

    fn inner(&self) -> &dyn Optimizer<f64> {
        match self {
            Learner::Shampoo(s) => s,
            Learner::Baseline(b) => b,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Optimizer<f64> {
        match self {
            Learner::Shampoo(s) => s,
            Learner::Baseline(b) => b,
        }
    }
}

impl Optimizer<f64> for Learner {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn params(&self) -> &Tensor {
        self.inner().params()
    }

    fn set_params(&mut self, params: Tensor) -> Result<()> {
        self.inner_mut().set_params(params)
    }

    fn apply_gradient(&mut self, grad: &Tensor) -> Result<()> {
        self.inner_mut().apply_gradient(grad)
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub bound: Option<BoundReport>,
    pub dominance: Option<CheckReport>,
    pub equivalence: Option<CheckReport>,
    pub comparator: Comparator,
    pub learner: Learner,
    pub learning_rate: f64,
    /// Set when the optimizer rejected a step; records stop at that round.
    pub aborted: Option<String>,
}

impl RunOutcome {
    /// True when every enabled check passed.
    pub fn checks_pass(&self) -> bool {
        self.bound.as_ref().is_none_or(|b| b.pass)
            && self.dominance.as_ref().is_none_or(|c| c.pass)
            && self.equivalence.as_ref().is_none_or(|c| c.pass)
    }
}

/// `sqrt(2r) * radius * prod_i tr((H_i)^(1/2k))` for the state's current statistics.
pub fn shampoo_bound(state: &ShampooState<f64>, r: f64, radius: f64) -> Result<f64> {
    Ok((2.0 * r).sqrt() * radius * trace_product(state)?)
}

fn trace_product(state: &ShampooState<f64>) -> Result<f64> {
    let alpha = 1.0 / (2 * state.order()) as f64;
    state.modes().iter().map(|m| m.trace_power(alpha)).product()
}

#[derive(Clone, Copy, Default)]
struct Checks {
    bound: Option<(TheoremId, f64)>,
    dominance: bool,
    equivalence: bool,
    wall: bool,
}

struct Pass {
    records: Vec<RunRecord>,
    learner: Learner,
    d: f64,
    d_inf: f64,
    dominance: Option<f64>,
    equivalence: Option<f64>,
    aborted: Option<String>,
}

/// Flattened full-matrix twin of Shampoo: `w <- w - eta (kron_i H_i^(1/2k))^(-1) g`,
/// with its own statistics gathered from its own gradients.
struct Mirror {
    w: Vec<f64>,
    stats: Vec<SymMatrix<f64>>,
    eta: f64,
    worst: f64,
}

impl Mirror {
    fn new(shape: &[usize], eps: f64, eta: f64) -> Self {
        Self {
            w: vec![0.0; shape.iter().product()],
            stats: shape
                .iter()
                .map(|&n| SymMatrix::scaled_identity(n, eps))
                .collect(),
            eta,
            worst: 0.0,
        }
    }

    fn step(&mut self, problem: &OnlineProblem, t: usize) -> Result<()> {
        let w = Tensor::new(problem.shape().to_vec(), self.w.clone())?;
        let g = problem.loss_and_grad(t, &w)?.1;
        let k = self.stats.len();
        let mut roots = Vec::with_capacity(k);
        for (i, s) in self.stats.iter_mut().enumerate() {
            let m = g.matricize(i)?;
            *s = s.add(&SymMatrix::symmetrize(&m.matmul(&m.transpose())?)?)?;
            roots.push(matrix_power(s, 1.0 / (2 * k) as f64)?.to_dense());
        }
        let h = kron_all(&roots);
        let x = cholesky_solve(&h, g.data()).ok_or(Error::Singular {
            index: 0,
            eigenvalue: 0.0,
        })?;
        self.w
            .iter_mut()
            .zip(&x)
            .for_each(|(w, xi)| *w -= self.eta * xi);
        Ok(())
    }

    fn compare(&mut self, w: &Tensor) {
        let scale = w.max_abs().max(1.0);
        let gap = w
            .data()
            .iter()
            .zip(&self.w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.worst = self.worst.max(gap / scale);
    }
}

fn cholesky_solve(a: &DenseMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a.get(i, j) - (0..j).map(|p| l[i * n + p] * l[j * n + p]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|p| l[i * n + p] * y[p]).sum::<f64>()) / l[i * n + i];
    }
    for i in (0..n).rev() {
        y[i] = (y[i] - (i + 1..n).map(|p| l[p * n + i] * y[p]).sum::<f64>()) / l[i * n + i];
    }
    Some(y)
}

/// Minimum Loewner slack of the Kronecker preconditioner over the full-matrix one.
pub(crate) fn dominance_slack(
    state: &ShampooState<f64>,
    outer_sum: &SymMatrix<f64>,
    r: f64,
) -> Result<f64> {
    let k = state.order();
    let eps = state.config().epsilon;
    let roots: Vec<DenseMatrix<f64>> = state
        .modes()
        .iter()
        .map(|m| matrix_power(&m.stats_matrix(), 1.0 / (2 * k) as f64).map(|p| p.to_dense()))
        .collect::<Result<_>>()?;
    let rhs = SymMatrix::symmetrize(&kron_all(&roots))?.scale(r.sqrt());
    let mut inner = outer_sum.clone();
    // The matrix argument scales the ridge by r; the tensor argument does not.
    inner.add_identity(if k == 2 { r * eps } else { eps });
    let lhs = matrix_power(&inner, 0.5)?;
    loewner_slack(&rhs, &lhs)
}

fn simulate(
    problem: &OnlineProblem,
    w_star: &Tensor,
    spec: &OptimizerSpec,
    checks: Checks,
) -> Result<Pass> {
    let mut learner = Learner::new(spec, problem.shape())?;
    let r = problem.bound_rank();
    let n: usize = problem.shape().iter().product();
    let mut outer_sum = checks.dominance.then(|| SymMatrix::scaled_identity(n, 0.0));
    let mut mirror = match (checks.equivalence, learner.shampoo()) {
        (true, Some(s)) => Some(Mirror::new(
            problem.shape(),
            s.config().epsilon,
            s.config().learning_rate,
        )),
        _ => None,
    };
    let mut pass = Pass {
        records: Vec::with_capacity(problem.horizon()),
        learner: learner.clone(),
        d: 0.0,
        d_inf: 0.0,
        dominance: checks.dominance.then_some(f64::INFINITY),
        equivalence: None,
        aborted: None,
    };
    let (mut cum_loss, mut regret) = (0.0, 0.0);
    for t in 1..=problem.horizon() {
        let w_t = learner.params().clone();
        let diff = w_t.sub(w_star)?;
        pass.d = pass.d.max(diff.frobenius_norm());
        pass.d_inf = pass.d_inf.max(diff.max_abs());
        let (loss, g) = problem.loss_and_grad(t, &w_t)?;
        cum_loss += loss;
        regret += loss - problem.loss(t, w_star)?;
        let mut record = RunRecord {
            step: t as u64,
            loss,
            cum_loss,
            regret,
            bound: None,
            wall_ns: 0,
        };
        if !loss.is_finite() {
            pass.aborted = Some(format!("round {t}: non-finite loss {loss}"));
            pass.records.push(record);
            break;
        }
        let started = Instant::now();
        let stepped = learner.apply_gradient(&g);
        if checks.wall {
            record.wall_ns = started.elapsed().as_nanos() as u64;
        }
        if let Err(e) = stepped {
            pass.aborted = Some(format!("round {t}: {e}"));
            pass.records.push(record);
            break;
        }
        if let (Some((theorem, r)), Some(s)) = (checks.bound, learner.shampoo()) {
            record.bound = Some(shampoo_bound(s, r, theorem.radius(pass.d, pass.d_inf))?);
        }
        if let (Some(sum), Some(s)) = (outer_sum.as_mut(), learner.shampoo()) {
            *sum = sum.add(&SymMatrix::outer(g.data()))?;
            let slack = dominance_slack(s, sum, r)?;
            pass.dominance = pass.dominance.map(|w| w.min(slack));
        }
        if let Some(m) = mirror.as_mut() {
            m.step(problem, t)?;
            m.compare(learner.params());
        }
        pass.records.push(record);
    }
    pass.equivalence = mirror.map(|m| m.worst);
    pass.learner = learner;
    Ok(pass)
}

/// Runs one experiment. With the bound check on, the step size is re-derived
/// from the measured radius as `radius / sqrt(2r)`: one pass with the
/// configured rate, then up to three theory passes, stopping once the radius
/// moves by at most 5%.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let problem = make_problem(&config.problem, config.horizon, config.batch, config.seed)?;
    let mut comparator = problem.solve_offline()?;
    let v = &config.verify;
    let mut checks = Checks {
        bound: None,
        dominance: v.dominance_check,
        equivalence: v.equivalence_check,
        wall: v.record_wall_time,
    };
    let mut spec = config.optimizer.clone();
    let mut theorem_r = None;
    if v.bound_check {
        let OptimizerSpec::Shampoo(sc) = &mut spec else {
            unreachable!("validated: bound check implies shampoo")
        };
        sc.root_update_interval = 1;
        sc.momentum = 0.0;
        let theorem =
            TheoremId::for_state(&ShampooState::<f64>::new(problem.shape(), sc.clone())?)?;
        let r = problem.bound_rank();
        checks.bound = Some((theorem, r));
        theorem_r = Some((theorem, r));
    }

    let mut pass = simulate(&problem, &comparator.w_star, &spec, checks)?;
    let mut passes = 1;
    if let Some((theorem, r)) = theorem_r {
        for _ in 0..3 {
            let radius = theorem.radius(pass.d, pass.d_inf);
            if radius <= 0.0 || pass.aborted.is_some() {
                break;
            }
            spec = spec.with_learning_rate(radius / (2.0 * r).sqrt());
            pass = simulate(&problem, &comparator.w_star, &spec, checks)?;
            passes += 1;
            let next = theorem.radius(pass.d, pass.d_inf);
            if (next - radius).abs() <= 0.05 * radius {
                break;
            }
        }
    }
    comparator.d = Some(pass.d);
    comparator.d_inf = Some(pass.d_inf);

    let eta = spec.learning_rate();
    let bound = match (theorem_r, pass.learner.shampoo()) {
        (Some((theorem, r)), Some(state)) => {
            let radius = theorem.radius(pass.d, pass.d_inf);
            let regret = pass.records.last().map_or(0.0, |x| x.regret);
            let bound = shampoo_bound(state, r, radius)?;
            let slack = bound - regret;
            Some(BoundReport {
                theorem,
                regret,
                bound,
                slack,
                r,
                radius,
                learning_rate: eta,
                bound_at_step_size: (radius * radius / (2.0 * eta) + eta * r)
                    * trace_product(state)?,
                passes,
                pass: pass.aborted.is_none() && slack >= -BOUND_SLACK_TOL * bound.max(1.0),
            })
        }
        _ => None,
    };
    let check = |name: &str, worst: Option<f64>, threshold: f64, ok: fn(f64, f64) -> bool| {
        worst.map(|w| CheckReport {
            name: name.to_string(),
            worst: w,
            threshold,
            pass: ok(w, threshold),
        })
    };
    Ok(RunOutcome {
        dominance: check(
            "preconditioner-dominance",
            pass.dominance,
            -DOMINANCE_TOL,
            |w, t| w >= t,
        ),
        equivalence: check(
            "flattened-equivalence",
            pass.equivalence,
            EQUIVALENCE_TOL,
            |w, t| w <= t,
        ),
        records: pass.records,
        bound,
        comparator,
        learner: pass.learner,
        learning_rate: eta,
        aborted: pass.aborted,
    })
}

/// Recomputes `R_t` from the recorded losses and a fresh evaluation of `f_t(W*)`.
pub fn regret_curve(
    records: &[RunRecord],
    comparator: &Comparator,
    problem: &OnlineProblem,
) -> Result<Vec<f64>> {
    if comparator.fingerprint != problem.fingerprint() {
        return Err(Error::ProblemMismatch);
    }
    let mut acc = 0.0;
    records
        .iter()
        .map(|r| {
            acc += r.loss - problem.loss(r.step as usize, &comparator.w_star)?;
            Ok(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::ShampooConfig;

    #[test]
    fn empty_horizon_bound_uses_ridge_only() {
        let eps: f64 = 0.0625;
        let state = ShampooState::<f64>::new(&[3, 5], ShampooConfig::exact(1.0, eps)).unwrap();
        let (r, d): (f64, f64) = (2.0, 1.5);
        let expected = (2.0 * r).sqrt() * d * (3.0 * eps.powf(0.25)) * (5.0 * eps.powf(0.25));
        assert!((shampoo_bound(&state, r, d).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_unit_gradient_bound() {
        let mut state = ShampooState::<f64>::new(&[2, 2], ShampooConfig::exact(1.0, 0.0)).unwrap();
        let g = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        state.step(&g).unwrap();
        let d = 0.7;
        let b = shampoo_bound(&state, 1.0, d).unwrap();
        assert!((b - 2f64.sqrt() * d).abs() < 1e-12, "{b}");
    }

    #[test]
    fn cholesky_matches_known_solution() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let x = cholesky_solve(&a, &[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
        let indefinite = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(cholesky_solve(&indefinite, &[1.0, 1.0]).is_none());
    }
}
