use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stabl::env::{
    make_allen_cahn, make_toda_lattice, make_toy2d, make_tubular_reactor, Environment,
    LinearDynamics,
};
use stabl::linalg::{orthonormalize, subspace_angles, DenseMatrix};
use stabl::manifold::{
    arnoldi_unstable_basis, dense_unstable_basis, pca_basis, ArnoldiOptions, LinearCoder,
    UnstableBasis, DEFAULT_MARGIN,
};

fn arnoldi(env: &Environment, seed: u64) -> UnstableBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let options = ArnoldiOptions::for_expected_modes(env.spec().nr_expected);
    arnoldi_unstable_basis(env, env.xbar(), env.ubar(), &options, &mut rng).unwrap()
}

fn assert_basis_invariants(env: &Environment, basis: &UnstableBasis) {
    let k = basis.nr();
    let gram = basis.w.transpose().matmul(&basis.w).unwrap();
    assert!(gram.sub(&DenseMatrix::identity(k)).unwrap().norm_max() <= 1e-10);
    if k > 0 {
        let cols: Vec<Vec<f64>> = basis
            .w
            .columns()
            .iter()
            .map(|c| env.vjp_state(env.xbar(), env.ubar(), c).unwrap())
            .collect();
        let wtj = DenseMatrix::from_columns(env.nh(), &cols).unwrap();
        assert!(basis.invariance_residual <= 1e-8 * wtj.norm_fro());
    }
    for lambda in &basis.eigenvalues {
        assert!(lambda.norm() >= 1.0 - DEFAULT_MARGIN);
    }
}

#[test]
fn toy2d_unstable_direction() {
    let env = make_toy2d(0.1).unwrap();
    let basis = arnoldi(&env, 1);
    assert_eq!(basis.nr(), 1);
    assert!((basis.eigenvalues[0] - Complex64::new(1.1, 0.0)).norm() < 1e-12);
    let s5 = 5f64.sqrt();
    assert!((basis.w[(0, 0)] - 1.0 / s5).abs() < 1e-12);
    assert!((basis.w[(1, 0)] - 2.0 / s5).abs() < 1e-12);
    assert_basis_invariants(&env, &basis);
}

#[test]
fn stable_map_has_empty_basis() {
    let a = DenseMatrix::from_diagonal(&[0.5, 0.5]);
    let b = DenseMatrix::from_rows(&[&[1.0], &[0.0]]);
    let env = LinearDynamics::new(a, b)
        .unwrap()
        .into_environment("stable", 1.0)
        .unwrap();
    let basis = arnoldi(&env, 2);
    assert_eq!(basis.nr(), 0);
    assert_eq!(basis.w.rows(), 2);
}

#[test]
fn arnoldi_agrees_with_dense_oracle() {
    let envs = [
        make_toy2d(0.1).unwrap(),
        make_allen_cahn(100).unwrap(),
        make_tubular_reactor(198).unwrap(),
        make_toda_lattice(50).unwrap(),
    ];
    for (env, expected) in envs.iter().zip([1, 1, 2, 2]) {
        let fast = arnoldi(env, 3);
        let slow = dense_unstable_basis(env, env.xbar(), env.ubar(), DEFAULT_MARGIN).unwrap();
        assert_eq!(fast.nr(), expected, "{}", env.name());
        assert_eq!(slow.nr(), expected, "{}", env.name());
        for (a, b) in fast.eigenvalues.iter().zip(&slow.eigenvalues) {
            assert!(
                (a - b).norm() <= 1e-8 * b.norm(),
                "{}: {a} vs {b}",
                env.name()
            );
        }
        for angle in subspace_angles(&fast.w, &slow.w).unwrap() {
            assert!(angle <= 1e-6, "{}: angle {angle}", env.name());
        }
        assert_basis_invariants(env, &fast);
        assert_basis_invariants(env, &slow);
    }
}

#[test]
fn allen_cahn_full_size_has_one_mode() {
    let env = make_allen_cahn(1000).unwrap();
    let basis = arnoldi(&env, 4);
    assert_eq!(basis.nr(), 1);
    assert!((basis.eigenvalues[0].re - 1.0732).abs() < 1e-4);
    assert_basis_invariants(&env, &basis);
}

#[test]
fn reactor_mode_count_is_grid_independent() {
    for n in [198, 398, 998] {
        let env = make_tubular_reactor(n).unwrap();
        let basis = arnoldi(&env, 5);
        assert_eq!(basis.nr(), 2, "n = {n}");
        assert!(basis.eigenvalues[0].im.abs() > 0.0);
        assert_basis_invariants(&env, &basis);
    }
}

#[test]
fn toda_full_size_has_two_modes() {
    let env = make_toda_lattice(500).unwrap();
    let basis = arnoldi(&env, 6);
    assert_eq!(basis.nr(), 2);
    assert_basis_invariants(&env, &basis);
}

#[test]
fn arnoldi_is_reproducible_for_a_seed() {
    let env = make_allen_cahn(100).unwrap();
    let a = arnoldi(&env, 9);
    let b = arnoldi(&env, 9);
    assert_eq!(a.w, b.w);
    assert_eq!(a.eigenvalues, b.eigenvalues);
}

#[test]
fn coder_examples() {
    let s5 = 5f64.sqrt();
    let w = DenseMatrix::from_rows(&[&[1.0 / s5], &[2.0 / s5]]);
    let coder = LinearCoder::new(w, vec![0.0, 0.0], vec![0.0]).unwrap();
    assert_eq!(coder.encode(&[0.0, 0.0]).unwrap(), vec![0.0]);
    assert!((coder.encode(&[1.0, 0.0]).unwrap()[0] - 0.44721).abs() < 1e-5);
    let x = coder.decode(&[s5]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    assert_eq!(coder.decode(&[0.0]).unwrap(), vec![0.0, 0.0]);
    assert!(coder.encode(&[1.0]).is_err());
    assert!(coder.decode(&[1.0, 2.0]).is_err());
}

#[test]
fn coder_round_trip_with_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raw = DenseMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
    let w = orthonormalize(&raw).unwrap();
    let center: Vec<f64> = (0..12).map(|i| i as f64 * 0.3).collect();
    let coder = LinearCoder::new(w, center.clone(), vec![1.0]).unwrap();
    assert!(coder
        .encode(&center)
        .unwrap()
        .iter()
        .all(|v| v.abs() < 1e-15));
    for _ in 0..50 {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let back = coder.encode(&coder.decode(&z).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn pca_examples() {
    let along_e1 = DenseMatrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.0, 0.0, 0.0]]);
    let coder = pca_basis(&along_e1, 1, &[0.0, 0.0], &[0.0]).unwrap();
    assert!((coder.basis()[(0, 0)].abs() - 1.0).abs() < 1e-15);

    let scaled = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]);
    let coder = pca_basis(&scaled, 1, &[0.0, 0.0], &[0.0]).unwrap();
    assert!((coder.basis()[(0, 0)].abs() - 1.0).abs() < 1e-15);

    assert!(pca_basis(&along_e1, 2, &[0.0, 0.0], &[0.0]).is_err());
    assert!(pca_basis(&along_e1, 4, &[0.0, 0.0], &[0.0]).is_err());
}

#[test]
fn pca_reconstruction_beats_random_bases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, k, nr) = (10, 30, 2);
    let mut snaps = DenseMatrix::from_fn(n, k, |_, _| rng.random_range(-0.1..0.1));
    for j in 0..k {
        let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        for i in 0..n {
            snaps[(i, j)] += a * (i as f64).sin() + b * (i as f64 * 0.5).cos();
        }
    }
    let center = vec![0.0; n];
    let coder = pca_basis(&snaps, nr, &center, &[0.0]).unwrap();
    let error = |w: &DenseMatrix| {
        let proj = w.matmul(&w.transpose().matmul(&snaps).unwrap()).unwrap();
        snaps.sub(&proj).unwrap().norm_fro()
    };
    let best = error(coder.basis());
    for _ in 0..200 {
        let w = orthonormalize(&DenseMatrix::from_fn(n, nr, |_, _| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap();
        assert!(best <= error(&w) + 1e-12);
    }
}
