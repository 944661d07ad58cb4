//! Optimizer trajectories and preconditioner inequalities against the
//! nested-vector oracles in `common`.

mod common;

use common::{flatten, kron, matmul, min_eig, spd_pow, Mat};
use shampoo::baselines::{BaselineConfig, BaselineKind, BaselineState};
use shampoo::optimizer::{
    deserialize, serialize, ModeVariant, MomentumPlacement, ShampooConfig, ShampooState,
};
use shampoo::psd::{matrix_power, SymMatrix};
use shampoo::tensor::DenseTensor;
use shampoo::{Error, Tensor};

fn to_mat(s: &SymMatrix<f64>) -> Mat {
    common::unflatten(s.data(), s.dim())
}

fn random_tensor(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), flatten(&common::uniform(rng, 1, n))).unwrap()
}

fn ridge(n: usize, eps: f64) -> Mat {
    common::eye(n)
        .into_iter()
        .map(|r| r.into_iter().map(|x| x * eps).collect())
        .collect()
}

fn add_into(dst: &mut Mat, src: &Mat) {
    for (a, b) in dst.iter_mut().flatten().zip(src.iter().flatten()) {
        *a += b;
    }
}

/// Mode-`i` Gram matrix of a row-major order-3 tensor, computed by index loops.
fn gram3(g: &Tensor, mode: usize) -> Mat {
    let s = g.shape();
    let mut out = vec![vec![0.0; s[mode]]; s[mode]];
    for a in 0..s[0] {
        for b in 0..s[1] {
            for c in 0..s[2] {
                let i = [a, b, c];
                for other in 0..s[mode] {
                    let mut j = i;
                    j[mode] = other;
                    out[i[mode]][other] += g.get(&i) * g.get(&j);
                }
            }
        }
    }
    out
}

#[test]
fn order_three_step_matches_flattened_oracle() {
    let (shape, eta, eps) = ([2usize, 3, 2], 0.5, 1e-2);
    let mut rng = common::rng(1);
    let mut state = ShampooState::<f64>::new(&shape, ShampooConfig::exact(eta, eps)).unwrap();
    let mut stats: Vec<Mat> = shape.iter().map(|&n| ridge(n, eps)).collect();
    let mut w = vec![0.0; 12];
    for _ in 0..10 {
        let g = random_tensor(&mut rng, &shape);
        state.step(&g).unwrap();
        for (i, s) in stats.iter_mut().enumerate() {
            add_into(s, &gram3(&g, i));
        }
        let p = stats
            .iter()
            .map(|s| spd_pow(s, -1.0 / 6.0))
            .reduce(|a, b| kron(&a, &b))
            .unwrap();
        let dir = matmul(&p, &g.data().iter().map(|&x| vec![x]).collect());
        w.iter_mut()
            .zip(flatten(&dir))
            .for_each(|(w, d)| *w -= eta * d);
        assert!(common::max_abs_diff(state.params().data(), &w) < 1e-11);
    }
}

#[test]
fn momentum_average_is_preconditioned() {
    let (eta, eps, alpha) = (0.1, 1e-3, 0.7);
    let config = ShampooConfig {
        momentum: alpha,
        ..ShampooConfig::exact(eta, eps)
    };
    let mut state = ShampooState::<f64>::new(&[3, 2], config).unwrap();
    let mut rng = common::rng(2);
    let (mut l, mut r) = (ridge(3, eps), ridge(2, eps));
    let (mut w, mut avg) = (vec![0.0; 6], vec![vec![0.0; 2]; 3]);
    for _ in 0..8 {
        let g = common::uniform(&mut rng, 3, 2);
        state
            .step(&Tensor::new(vec![3, 2], flatten(&g)).unwrap())
            .unwrap();
        add_into(&mut l, &matmul(&g, &common::transpose(&g)));
        add_into(&mut r, &matmul(&common::transpose(&g), &g));
        for (a, x) in avg.iter_mut().flatten().zip(g.iter().flatten()) {
            *a = alpha * *a + (1.0 - alpha) * x;
        }
        let dir = flatten(&matmul(
            &matmul(&spd_pow(&l, -0.25), &avg),
            &spd_pow(&r, -0.25),
        ));
        w.iter_mut().zip(dir).for_each(|(w, d)| *w -= eta * d);
        assert!(common::max_abs_diff(state.params().data(), &w) < 1e-11);
    }
}

#[test]
fn roots_refresh_on_schedule() {
    let config = ShampooConfig {
        root_update_interval: 3,
        ..ShampooConfig::default()
    };
    let mut state = ShampooState::<f64>::new(&[2, 2], config).unwrap();
    let g = Tensor::new(vec![2, 2], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    let pattern: Vec<bool> = (0..7)
        .map(|_| state.step(&g).unwrap().roots_recomputed)
        .collect();
    assert_eq!(pattern, [true, false, true, false, false, true, false]);
    assert_eq!(state.roots_step(), Some(6));
}

#[test]
fn diagonal_gradients_make_variants_agree() {
    let mut rng = common::rng(3);
    let mut full = ShampooState::<f64>::new(&[4, 4], ShampooConfig::exact(0.3, 1e-3)).unwrap();
    let mut diag =
        ShampooState::<f64>::new(&[4, 4], ShampooConfig::exact(0.3, 1e-3).all_diagonal(2)).unwrap();
    assert_eq!(diag.variants(), [ModeVariant::Diagonal; 2]);
    for _ in 0..15 {
        let d = flatten(&common::uniform(&mut rng, 1, 4));
        let g = Tensor::from_fn(&[4, 4], |i| if i[0] == i[1] { d[i[0]] } else { 0.0 }).unwrap();
        full.step(&g).unwrap();
        diag.step_diagonal(&g).unwrap();
    }
    assert!(common::max_abs_diff(full.params().data(), diag.params().data()) < 1e-12);
    assert!(matches!(
        full.step_diagonal(&Tensor::zeros(&[4, 4]).unwrap()),
        Err(Error::VariantMismatch(_))
    ));
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = common::rng(4);
    let mut s64 = ShampooState::<f64>::new(&[3, 3], ShampooConfig::exact(0.1, 1e-2)).unwrap();
    let mut s32 = ShampooState::<f32>::new(&[3, 3], ShampooConfig::exact(0.1, 1e-2)).unwrap();
    for _ in 0..10 {
        let g = random_tensor(&mut rng, &[3, 3]);
        s64.step(&g).unwrap();
        let g32 =
            DenseTensor::new(vec![3, 3], g.data().iter().map(|&x| x as f32).collect()).unwrap();
        s32.step(&g32).unwrap();
    }
    for (a, b) in s64.params().data().iter().zip(s32.params().data()) {
        assert!((a - *b as f64).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn rejected_steps_leave_state_untouched() {
    let mut state = ShampooState::<f64>::new(&[2, 3], ShampooConfig::default()).unwrap();
    state
        .step(&Tensor::from_fn(&[2, 3], |i| (i[0] + i[1]) as f64).unwrap())
        .unwrap();
    let before = state.clone();
    assert!(state.step(&Tensor::zeros(&[3, 2]).unwrap()).is_err());
    let mut bad = Tensor::zeros(&[2, 3]).unwrap();
    bad.data_mut()[4] = f64::NAN;
    assert!(state.step(&bad).is_err());
    assert_eq!(state, before);
}

#[test]
fn checkpoint_rejects_damage() {
    let mut state = ShampooState::<f64>::new(&[2, 3], ShampooConfig::default()).unwrap();
    state
        .step(&Tensor::from_fn(&[2, 3], |i| 1.0 + i[1] as f64).unwrap())
        .unwrap();
    let bytes = serialize(&state);
    assert_eq!(&bytes[..8], b"SHAMPOO\0");
    assert_eq!(deserialize::<f64>(&bytes).unwrap(), state);

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(
        deserialize::<f64>(&flipped),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(
        deserialize::<f64>(&bytes[..bytes.len() - 3]),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(
        deserialize::<f32>(&bytes),
        Err(Error::Checkpoint(_))
    ));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(
        deserialize::<f64>(&magic),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn matrix_power_matches_jacobi() {
    let mut rng = common::rng(5);
    for n in 1..=8 {
        let b = common::uniform(&mut rng, n, n + 2);
        let mut a = matmul(&b, &common::transpose(&b));
        add_into(&mut a, &ridge(n, 0.1));
        let sym = SymMatrix::new(n, flatten(&a)).unwrap();
        for alpha in [-0.5, -0.25, 0.25, 0.5, 2.0] {
            let got = matrix_power(&sym, alpha).unwrap();
            let want = flatten(&spd_pow(&a, alpha));
            let scale = want.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            assert!(
                common::max_abs_diff(got.data(), &want) < 1e-11 * scale,
                "n={n} alpha={alpha}"
            );
        }
    }
    // Eigenvalues 2 and 0; the zero one is lifted to tau = 1e-12 * 2 for negative powers.
    let rank_one = SymMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let inv = matrix_power(&rank_one, -0.5).unwrap();
    let (big, small) = (2f64.powf(-0.5) / 2.0, (2e-12f64).powf(-0.5) / 2.0);
    assert!((inv.get(0, 0) - (big + small)).abs() < 1e-6 * small);
    assert!((inv.get(0, 1) - (big - small)).abs() < 1e-6 * small);
    let root = matrix_power(&rank_one, 0.5).unwrap();
    assert!(common::max_abs_diff(root.data(), &[0.5f64.sqrt(); 4]) < 1e-14);
    let zero = SymMatrix::new(2, vec![0.0; 4]).unwrap();
    assert!(matches!(
        matrix_power(&zero, -0.5),
        Err(Error::Singular { .. })
    ));
}

/// For a rank-one `G` the two one-sided bounds hold with `r = 1` and are tight.
#[test]
fn rank_one_gradient_bounds_are_tight() {
    let mut rng = common::rng(6);
    let u = common::uniform(&mut rng, 3, 1);
    let v = common::uniform(&mut rng, 1, 4);
    let g = matmul(&u, &v);
    let gg: Mat = {
        let f = flatten(&g);
        f.iter()
            .map(|a| f.iter().map(|b| a * b).collect())
            .collect()
    };
    for side in [
        kron(&common::eye(3), &matmul(&common::transpose(&g), &g)),
        kron(&matmul(&g, &common::transpose(&g)), &common::eye(4)),
    ] {
        let diff: Mat = side
            .iter()
            .zip(&gg)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let lo = min_eig(&diff);
        assert!(lo >= -1e-12, "{lo}");
        assert!(lo.abs() < 1e-12, "bound should touch zero, min eig {lo}");
    }
}

/// `G_t = I` for `t` rounds: Shampoo's roots are scalar multiples of the identity
/// and the flattened statistic stays below `sqrt(n)` times their Kronecker product.
#[test]
fn identity_gradients_give_scalar_preconditioners() {
    let (n, eps, rounds) = (3usize, 0.5, 4);
    let mut state = ShampooState::<f64>::new(&[n, n], ShampooConfig::exact(0.1, eps)).unwrap();
    let eye = Tensor::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
    for _ in 0..rounds {
        state.step(&eye).unwrap();
    }
    let c = (eps + rounds as f64).powf(-0.25);
    for m in state.modes() {
        let root = m.root_matrix();
        assert!(common::max_abs_diff(root.data(), &flatten(&ridge(n, c))) < 1e-14);
    }
    let v = flatten(&common::eye(n));
    let mut lhs: Mat = v
        .iter()
        .map(|a| v.iter().map(|b| rounds as f64 * a * b).collect())
        .collect();
    add_into(&mut lhs, &ridge(n * n, n as f64 * eps));
    let lhs = spd_pow(&lhs, 0.5);
    let rhs = ridge(n * n, (n as f64).sqrt() * (eps + rounds as f64).sqrt());
    let diff: Mat = rhs
        .iter()
        .zip(&lhs)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    assert!(min_eig(&diff) >= -1e-12);
}

/// Full-matrix AdaGrad's live statistic, regularized by `r * eps`, stays below
/// `sqrt(r)` times Shampoo's Kronecker preconditioner when every gradient has rank at most `r`.
#[test]
fn full_adagrad_statistic_is_dominated() {
    let (m, n, r, eps) = (3usize, 4usize, 2usize, 1e-2);
    let mut rng = common::rng(7);
    let mut shampoo = ShampooState::<f64>::new(&[m, n], ShampooConfig::exact(0.1, eps)).unwrap();
    let cfg = BaselineConfig {
        epsilon: r as f64 * eps,
        ..BaselineConfig::default()
    };
    let mut adagrad = BaselineState::<f64>::new(BaselineKind::AdagradFull, &[m, n], cfg).unwrap();
    for _ in 0..12 {
        let g = matmul(
            &common::uniform(&mut rng, m, r),
            &common::uniform(&mut rng, r, n),
        );
        let t = Tensor::new(vec![m, n], flatten(&g)).unwrap();
        shampoo.step(&t).unwrap();
        adagrad.step(&t).unwrap();

        let mut full = to_mat(adagrad.full_statistic().unwrap());
        add_into(&mut full, &ridge(m * n, r as f64 * eps));
        let lhs = spd_pow(&full, 0.5);
        let roots: Vec<Mat> = shampoo
            .modes()
            .iter()
            .map(|s| spd_pow(&to_mat(&s.stats_matrix()), 0.25))
            .collect();
        let k = kron(&roots[0], &roots[1]);
        let diff: Mat = k
            .iter()
            .zip(&lhs)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (r as f64).sqrt() * x - y)
                    .collect()
            })
            .collect();
        assert!(min_eig(&diff) >= -1e-9, "{}", min_eig(&diff));
    }
}

#[test]
fn update_placement_averages_preconditioned_steps() {
    let (eta, alpha) = (0.2, 0.5);
    let cfg = |placement| ShampooConfig {
        momentum: alpha,
        momentum_placement: placement,
        ..ShampooConfig::exact(eta, 1e-3)
    };
    let mut update = ShampooState::<f64>::new(&[2, 2], cfg(MomentumPlacement::Update)).unwrap();
    let mut plain = ShampooState::<f64>::new(&[2, 2], ShampooConfig::exact(1.0, 1e-3)).unwrap();
    let mut rng = common::rng(8);
    let mut avg = vec![0.0; 4];
    let mut w = vec![0.0; 4];
    for _ in 0..5 {
        let g = random_tensor(&mut rng, &[2, 2]);
        update.step(&g).unwrap();
        // `plain` sees the same gradients, so its preconditioner is the same.
        plain.step(&g).unwrap();
        let pre = plain.precondition(&g).unwrap();
        avg.iter_mut()
            .zip(pre.data())
            .for_each(|(a, p)| *a = alpha * *a + (1.0 - alpha) * p);
        w.iter_mut().zip(&avg).for_each(|(w, a)| *w -= eta * a);
        assert!(common::max_abs_diff(update.params().data(), &w) < 1e-12);
    }
}
