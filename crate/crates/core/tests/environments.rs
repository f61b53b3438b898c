use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stabl::env::{
    finite_difference_vjp_oracle, make_allen_cahn, make_toda_lattice, make_toy2d,
    make_tubular_reactor, newton_steady_state, Environment, LinearDynamics,
};
use stabl::linalg::{dense_eigendecompose, dot, norm_inf, DenseMatrix, EigenvectorRequest};

fn desk_environments() -> Vec<Environment> {
    vec![
        make_toy2d(0.1).unwrap(),
        make_allen_cahn(100).unwrap(),
        make_tubular_reactor(198).unwrap(),
        make_toda_lattice(50).unwrap(),
    ]
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn near_steady_state(env: &Environment, rng: &mut ChaCha8Rng, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let dx = gaussian(rng, env.nh(), scale);
    let du = gaussian(rng, env.np(), scale);
    let x = env.xbar().iter().zip(dx).map(|(a, b)| a + b).collect();
    let u = env.ubar().iter().zip(du).map(|(a, b)| a + b).collect();
    (x, u)
}

#[test]
fn adjoint_consistency_on_builtin_environments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for env in desk_environments() {
        for _ in 0..100 {
            let (x, u) = near_steady_state(&env, &mut rng, 1e-2);
            let v = gaussian(&mut rng, env.nh(), 1.0);
            let z = gaussian(&mut rng, env.nh(), 1.0);
            let forward = dot(&z, &env.jvp_state(&x, &u, &v).unwrap());
            let backward = dot(&env.vjp_state(&x, &u, &z).unwrap(), &v);
            assert!(
                (forward - backward).abs() <= 1e-9 * (1.0 + forward.abs()),
                "{}: {forward} vs {backward}",
                env.name()
            );

            let w = gaussian(&mut rng, env.np(), 1.0);
            let forward = dot(&z, &env.jvp_control(&x, &u, &w).unwrap());
            let backward = dot(&env.vjp_control(&x, &u, &z).unwrap(), &w);
            assert!((forward - backward).abs() <= 1e-9 * (1.0 + forward.abs()));
        }
    }
}

#[test]
fn analytic_adjoint_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for env in desk_environments() {
        for _ in 0..20 {
            let (x, u) = near_steady_state(&env, &mut rng, 1e-3);
            let z = gaussian(&mut rng, env.nh(), 1.0);
            let exact = env.vjp_state(&x, &u, &z).unwrap();
            let h = 1e-6 * (1.0 + norm_inf(&x));
            let approx =
                finite_difference_vjp_oracle(env.dynamics().as_ref(), &x, &u, &z, h).unwrap();
            let scale = norm_inf(&exact).max(1e-300);
            let err = exact
                .iter()
                .zip(&approx)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-5 * scale, "{}: {err} vs {scale}", env.name());
        }
    }
}

#[test]
fn toy2d_fd_oracle_example() {
    let env = make_toy2d(0.1).unwrap();
    let g = finite_difference_vjp_oracle(
        env.dynamics().as_ref(),
        &[0.4, -1.0],
        &[0.2],
        &[0.0, 1.0],
        1e-6,
    )
    .unwrap();
    assert!((g[0] - 0.1).abs() < 1e-8 && (g[1] - 1.1).abs() < 1e-8);
}

#[test]
fn equilibria_hold() {
    for env in desk_environments() {
        let r = env.equilibrium_residual().unwrap();
        assert!(
            r <= 1e-12 * (1.0 + norm_inf(env.xbar())),
            "{}: {r}",
            env.name()
        );
        let next = env.step(env.xbar(), env.ubar()).unwrap();
        assert!(next
            .iter()
            .zip(env.xbar())
            .all(|(a, b)| (a - b).abs() <= 1e-9));
    }
}

#[test]
fn unstable_mode_counts_from_dense_spectrum() {
    for (env, expected) in desk_environments().into_iter().zip([1, 1, 2, 2]) {
        let jac = env.state_jacobian(env.xbar(), env.ubar()).unwrap();
        let spectrum = dense_eigendecompose(&jac, EigenvectorRequest::None).unwrap();
        assert_eq!(
            spectrum.count_at_least(1.0 - 1e-9),
            expected,
            "{}",
            env.name()
        );
        assert_eq!(env.spec().nr_expected, expected);
    }
}

#[test]
fn toy2d_newton_examples() {
    let env = make_toy2d(0.1).unwrap();
    let dyns = env.dynamics().as_ref();
    let zero = newton_steady_state(dyns, &[0.0], &[0.0, 0.0]).unwrap();
    assert!(norm_inf(&zero) == 0.0);
    let x = newton_steady_state(dyns, &[1.0], &[0.0, 0.0]).unwrap();
    assert!((x[0] - 10.0).abs() < 1e-10 && (x[1] + 10.0).abs() < 1e-10);
}

#[test]
fn allen_cahn_paper_size() {
    let env = make_allen_cahn(1000).unwrap();
    assert_eq!((env.nh(), env.np()), (1000, 1));
    let r = env.equilibrium_residual().unwrap();
    assert!(r <= 1e-12 * (1.0 + norm_inf(env.xbar())));
}

#[test]
fn reactor_and_toda_shapes() {
    let reactor = make_tubular_reactor(998).unwrap();
    assert_eq!((reactor.nh(), reactor.np()), (998, 2));
    let toda = make_toda_lattice(500).unwrap();
    assert_eq!((toda.nh(), toda.np()), (1000, 3));
    let zero = toda.step(&vec![0.0; 1000], &[0.0; 3]).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
    assert!(make_tubular_reactor(7).is_err());
    assert!(make_allen_cahn(2).is_err());
}

#[test]
fn outputs_have_expected_shape() {
    let ac = make_allen_cahn(30).unwrap();
    let y = ac.observe(&vec![1.0; 30]).unwrap();
    assert_eq!(y.len(), 2);
    assert_eq!(y[0] + y[1], 30.0);
    assert!(y[0] > 5.0 && y[0] < 15.0);

    let toda = make_toda_lattice(50).unwrap();
    let mut x = vec![0.0; 100];
    x[50..].iter_mut().for_each(|v| *v = 2.0);
    assert!(toda
        .observe(&x)
        .unwrap()
        .iter()
        .all(|v| (v - 2.0).abs() < 1e-15));
}

#[test]
fn reactor_blowup_is_reported() {
    let env = make_tubular_reactor(20).unwrap();
    let mut x = env.xbar().to_vec();
    x[15] = -1.0;
    assert!(matches!(
        env.step(&x, env.ubar()),
        Err(stabl::Error::StateBlowup { index: 15 })
    ));
}

#[test]
fn stable_linear_map_expects_no_unstable_modes() {
    let a = DenseMatrix::from_rows(&[&[0.5, 0.1], &[0.0, 0.5]]);
    let b = DenseMatrix::from_rows(&[&[1.0], &[1.0]]);
    let env = LinearDynamics::new(a, b)
        .unwrap()
        .into_environment("stable", 1.0)
        .unwrap();
    assert_eq!(env.spec().nr_expected, 0);
}

mod linearity {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn toy2d_step_is_linear(alpha in -10.0f64..10.0, x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, u in -5.0f64..5.0) {
            let env = make_toy2d(0.1).unwrap();
            let scaled = env.step(&[alpha * x0, alpha * x1], &[alpha * u]).unwrap();
            let base = env.step(&[x0, x1], &[u]).unwrap();
            for (s, b) in scaled.iter().zip(&base) {
                prop_assert!((s - alpha * b).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }
    }
}
