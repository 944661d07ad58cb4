//! Loss families: gradients against central differences, convexity along random
//! chords, comparator optimality and the certified gradient ranks.

mod common;

use rand::Rng;
use shampoo::problems::{make_problem, LossFamily, OnlineProblem, ProblemSpec};
use shampoo::psd::numerical_rank;
use shampoo::Tensor;

fn specs() -> Vec<ProblemSpec> {
    vec![
        ProblemSpec::new(LossFamily::MatrixLeastSquares, &[5, 4]).with_condition(20.0),
        ProblemSpec::new(LossFamily::MatrixLeastSquares, &[6, 5]).with_ranks(&[2, 3]),
        ProblemSpec::new(LossFamily::MulticlassLogistic, &[4, 6]),
        ProblemSpec::new(LossFamily::MulticlassLogistic, &[3, 5]).with_ranks(&[3, 2]),
        ProblemSpec::new(LossFamily::TensorRegression, &[3, 4, 2]).with_condition(5.0),
        ProblemSpec::new(LossFamily::TensorRegression, &[4, 3, 3]).with_ranks(&[2, 2, 1]),
        ProblemSpec::new(LossFamily::Quadratic, &[4, 5]).with_condition(100.0),
        ProblemSpec::new(LossFamily::Quadratic, &[2, 3, 2]).with_condition(10.0),
    ]
}

fn random_point(problem: &OnlineProblem, seed: u64, scale: f64) -> Tensor {
    let mut rng = common::rng(seed);
    Tensor::from_fn(problem.shape(), |_| scale * rng.random_range(-1.0..1.0)).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    for spec in specs() {
        let p = make_problem(&spec, 5, 4, 1).unwrap();
        for t in [1, 5] {
            let w = random_point(&p, t as u64, 0.5);
            let (_, g) = p.loss_and_grad(t, &w).unwrap();
            let h = 1e-6;
            for i in 0..w.len() {
                let mut plus = w.clone();
                plus.data_mut()[i] += h;
                let mut minus = w.clone();
                minus.data_mut()[i] -= h;
                let fd = (p.loss(t, &plus).unwrap() - p.loss(t, &minus).unwrap()) / (2.0 * h);
                let err = (fd - g.data()[i]).abs() / g.data()[i].abs().max(1.0);
                assert!(
                    err <= 1e-5,
                    "{:?} t={t} i={i}: fd {fd} vs {}",
                    spec.family,
                    g.data()[i]
                );
            }
        }
    }
}

#[test]
fn losses_are_convex_along_chords() {
    for spec in specs() {
        let p = make_problem(&spec, 3, 4, 2).unwrap();
        let mut rng = common::rng(9);
        for trial in 0..20 {
            let (a, b) = (
                random_point(&p, 100 + trial, 2.0),
                random_point(&p, 200 + trial, 2.0),
            );
            let lam: f64 = rng.random_range(0.0..1.0);
            let mid = a.scale(lam).add(&b.scale(1.0 - lam)).unwrap();
            let t = 1 + trial as usize % 3;
            let (fa, fb, fm) = (
                p.loss(t, &a).unwrap(),
                p.loss(t, &b).unwrap(),
                p.loss(t, &mid).unwrap(),
            );
            let chord = lam * fa + (1.0 - lam) * fb;
            assert!(
                fm <= chord + 1e-12 * chord.abs().max(1.0),
                "{:?}",
                spec.family
            );
        }
    }
}

#[test]
fn comparator_is_a_minimizer() {
    for spec in specs() {
        let p = make_problem(&spec, 40, 4, 3).unwrap();
        let c = p.solve_offline().unwrap();
        let total = p.total_loss(&c.w_star).unwrap();
        assert!((total - c.objective).abs() <= 1e-9 * total.abs().max(1.0));
        let mut grad = Tensor::zeros(p.shape()).unwrap();
        for t in 1..=p.horizon() {
            grad = grad.add(&p.loss_and_grad(t, &c.w_star).unwrap().1).unwrap();
        }
        assert!(
            grad.frobenius_norm() / p.horizon() as f64 <= 1e-7,
            "{:?}: {}",
            spec.family,
            grad.frobenius_norm()
        );
        for seed in 0..5 {
            let nudged = c.w_star.add(&random_point(&p, 300 + seed, 1e-3)).unwrap();
            assert!(p.total_loss(&nudged).unwrap() >= total - 1e-9 * total.abs().max(1.0));
        }
    }
}

#[test]
fn gradient_unfoldings_respect_certified_ranks() {
    for spec in specs() {
        let p = make_problem(&spec, 6, 3, 4).unwrap();
        let certified = p.certified_ranks();
        assert_eq!(certified.len(), p.shape().len());
        let expected_r =
            certified.iter().map(|&r| (r as f64).ln()).sum::<f64>() / certified.len() as f64;
        assert!((p.bound_rank() - expected_r.exp()).abs() < 1e-12);
        for t in 1..=6 {
            let (_, g) = p
                .loss_and_grad(t, &random_point(&p, t as u64, 1.0))
                .unwrap();
            for (mode, &r) in certified.iter().enumerate() {
                let rank = numerical_rank(&g.matricize(mode).unwrap(), 1e-10).unwrap();
                assert!(
                    rank <= r,
                    "{:?} mode {mode}: rank {rank} > certified {r}",
                    spec.family
                );
            }
        }
    }
}

#[test]
fn generation_depends_only_on_seed() {
    let spec = ProblemSpec::new(LossFamily::TensorRegression, &[3, 3, 2]);
    let (a, b) = (
        make_problem(&spec, 10, 4, 5).unwrap(),
        make_problem(&spec, 10, 4, 5).unwrap(),
    );
    let other = make_problem(&spec, 10, 4, 6).unwrap();
    let w = random_point(&a, 1, 1.0);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), other.fingerprint());
    for t in 1..=10 {
        assert_eq!(
            a.loss_and_grad(t, &w).unwrap(),
            b.loss_and_grad(t, &w).unwrap()
        );
    }
    assert_ne!(a.loss(1, &w).unwrap(), other.loss(1, &w).unwrap());
    assert!(a.loss(0, &w).is_err() && a.loss(11, &w).is_err());
}
