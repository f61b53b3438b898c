use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stabl::agent::{Activation, Agent, AgentShape, DdpgConfig, Mlp};
use stabl::env::{
    make_allen_cahn, make_toy2d, make_tubular_reactor, Dynamics, Environment, LinearDynamics,
};
use stabl::linalg::{dense_eigendecompose, DenseMatrix, EigenvectorRequest};
use stabl::manifold::LinearCoder;
use stabl::train::{
    closed_loop_spectrum, estimate_basis, evaluate_with_disturbance, latent_closed_loop_spectrum,
    lifted_policy_action, logmean, normalized_reward, policy_gain, read_eval_csv, read_train_log,
    reward, run_episode, run_episode_from, termination_penalty, train, train_from, write_eval_csv,
    write_train_log, DisturbanceProtocol, Episode, LogRow, Method, Plant, RewardSpec, RunStatus,
    SeedPlan, TrainConfig,
};

const S5: f64 = 2.236_067_977_499_79;

fn spec(lambda_u: f64, tf: usize) -> RewardSpec {
    RewardSpec::new(lambda_u, tf, 1e3).unwrap()
}

/// Single-path linear actor `z ↦ psi·z` with zero biases.
fn linear_actor(psi: f64) -> Mlp {
    Mlp::from_params(
        [1, 1, 1, 1],
        Activation::Identity,
        Activation::Identity,
        vec![1.0, 0.0, 1.0, 0.0, psi, 0.0],
    )
    .unwrap()
}

fn toy2d_coder(env: &Environment) -> LinearCoder {
    let w = DenseMatrix::from_rows(&[&[1.0 / S5], &[2.0 / S5]]);
    LinearCoder::new(w, env.xbar().to_vec(), env.ubar().to_vec()).unwrap()
}

/// Delegates to another dynamics and counts `step` calls.
struct Counting {
    inner: Arc<dyn Dynamics>,
    steps: AtomicU64,
}

impl Dynamics for Counting {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> stabl::Result<Vec<f64>> {
        self.steps.fetch_add(1, Ordering::SeqCst);
        self.inner.step(x, u)
    }
    fn jvp_state(&self, x: &[f64], u: &[f64], v: &[f64]) -> stabl::Result<Vec<f64>> {
        self.inner.jvp_state(x, u, v)
    }
    fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> stabl::Result<Vec<f64>> {
        self.inner.vjp_state(x, u, z)
    }
    fn jvp_control(&self, x: &[f64], u: &[f64], w: &[f64]) -> stabl::Result<Vec<f64>> {
        self.inner.jvp_control(x, u, w)
    }
    fn vjp_control(&self, x: &[f64], u: &[f64], z: &[f64]) -> stabl::Result<Vec<f64>> {
        self.inner.vjp_control(x, u, z)
    }
}

fn counting(env: &Environment) -> (Environment, Arc<Counting>) {
    let dynamics = Arc::new(Counting {
        inner: env.dynamics().clone(),
        steps: AtomicU64::new(0),
    });
    let wrapped = Environment::new(env.spec().clone(), dynamics.clone()).unwrap();
    (wrapped, dynamics)
}

fn small_config(method: Method, max_steps: u64) -> TrainConfig {
    TrainConfig {
        method,
        max_steps,
        tf: 50,
        batch_size: 32,
        offline_steps: 64,
        eval_interval: 200,
        actor_widths: (8, 6),
        ..TrainConfig::default()
    }
}

#[test]
fn reward_examples() {
    let s = spec(1e-3, 10);
    assert_eq!(reward(&s, &[3.0, 4.0], &[1.0], &[1.0]), -5.0);
    let s = spec(0.25, 10);
    assert!((reward(&s, &[0.0, 0.0], &[2.0], &[0.0]) + 1.0).abs() < 1e-12);
    assert!((termination_penalty(&s, &[1.0, 0.0], &[2.0], &[0.0], 6) + S5).abs() < 1e-12);
    assert!((termination_penalty(&s, &[1.0, 0.0], &[2.0], &[0.0], 10) + 1.0).abs() < 1e-12);
    assert!((normalized_reward(-10.0, 1, 0.0, 100) + 1.0).abs() < 1e-12);
    assert!((normalized_reward(-6.0, 2, 0.25, 4) + 2.0).abs() < 1e-12);
    assert!((logmean(&[-1.0, -100.0]).unwrap() + 10.0).abs() < 1e-12);
    assert!((logmean(&[-0.5]).unwrap() + 0.5).abs() < 1e-12);
    assert!(logmean(&[]).is_err());
    assert!(logmean(&[-1.0, 1.0]).is_err());
    assert!(logmean(&[0.0]).is_err());
    let s = spec(1000.0, 100);
    assert!((reward(&s, &[2.0, 0.0], &[1.0], &[0.0]) + 1004f64.sqrt()).abs() < 1e-12);
    assert_eq!(reward(&s, &[0.0, 0.0], &[3.0], &[3.0]), 0.0);
    let s = spec(0.0, 100);
    assert_eq!(reward(&s, &[1.0, 0.0, 0.0], &[7.0], &[7.0]), -1.0);
    assert!(
        (termination_penalty(&s, &[0.0, 2.0], &[0.0], &[0.0], 50) + 200f64.sqrt()).abs() < 1e-12
    );
    assert!((termination_penalty(&s, &[1.0], &[0.0], &[0.0], 99) + 1.0).abs() < 1e-12);
    assert_eq!(termination_penalty(&s, &[0.0], &[1.0], &[1.0], 3), 0.0);
    assert!((normalized_reward(-100.0, 1, 0.0, 100) + 10.0).abs() < 1e-12);
    assert_eq!(normalized_reward(0.0, 3, 0.5, 10), 0.0);
    assert!((normalized_reward(-501_000f64.sqrt(), 2, 1000.0, 500) + 1.0).abs() < 1e-12);
    assert!((logmean(&[-5.0]).unwrap() + 5.0).abs() < 1e-12);
    assert!((logmean(&[-10.0, -10.0, -10.0]).unwrap() + 10.0).abs() < 1e-12);
    assert!(RewardSpec::new(-1.0, 10, 1.0).is_err());
    assert!(RewardSpec::new(0.0, 0, 1.0).is_err());
}

proptest! {
    #[test]
    fn rewards_are_never_positive(
        obs in prop::collection::vec(-1e3f64..1e3, 1..6),
        u in -1e3f64..1e3,
        ubar in -1e3f64..1e3,
        lambda_u in 0.0f64..10.0,
        ta in 0usize..20,
    ) {
        let s = RewardSpec::new(lambda_u, 20, 1.0).unwrap();
        prop_assert!(reward(&s, &obs, &[u], &[ubar]) <= 0.0);
        prop_assert!(termination_penalty(&s, &obs, &[u], &[ubar], ta) <= 0.0);
    }

    #[test]
    fn logmean_lies_between_extremes(values in prop::collection::vec(-1e6f64..-1e-6, 1..20)) {
        let m = logmean(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo * (1.0 + 1e-12) && m <= hi * (1.0 - 1e-12));
    }
}

#[test]
fn lifted_policy_examples() {
    let env = make_toy2d(0.1).unwrap();
    let coder = toy2d_coder(&env);
    let actor = linear_actor(-S5);
    let u = lifted_policy_action(&coder, &actor, &[1.0, 2.0], 10.0).unwrap();
    assert!((u[0] + 5.0).abs() < 1e-12);
    let u = lifted_policy_action(&coder, &actor, env.xbar(), 10.0).unwrap();
    assert_eq!(u, env.ubar());
    // Identity outputs are clipped to the action bound.
    let u = lifted_policy_action(&coder, &actor, &[1.0, 2.0], 2.0).unwrap();
    assert_eq!(u, vec![-2.0]);
}

#[test]
fn stable_environment_earns_zero_reward_at_rest() {
    let a = DenseMatrix::from_rows(&[&[0.5, 0.1], &[0.0, 0.7]]);
    let b = DenseMatrix::from_rows(&[&[1.0], &[1.0]]);
    let env = LinearDynamics::new(a, b)
        .unwrap()
        .into_environment("stable", 1.0)
        .unwrap();
    let coder = LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec()).unwrap();
    let plant = Plant::new(&env, &coder).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = spec(1e-3, 40);
    let record = run_episode(&plant, &mut |_| Ok(vec![0.0]), &s, &mut rng, 0.0).unwrap();
    assert_eq!(record.length, 40);
    assert!(!record.terminated_early);
    assert!(record.rewards.iter().all(|r| *r == 0.0));
    assert_eq!(record.queries, 40);
    assert_eq!(plant.queries(), 40);
}

#[test]
fn uncontrolled_toy2d_terminates_early() {
    let env = make_toy2d(0.1).unwrap();
    let coder = LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec()).unwrap();
    let plant = Plant::new(&env, &coder).unwrap();
    let s = spec(1e-3, 500);
    let record = run_episode_from(
        &plant,
        &mut |_| Ok(vec![0.0]),
        &s,
        Episode::start(vec![0.0, 1e-3]),
    )
    .unwrap();
    assert!(record.terminated_early);
    assert!(record.length < 500);
    // The unstable state grows by 1.1 per step from 1e-3 past 1e3.
    let expected = ((1e6f64).ln() / 1.1f64.ln()).floor() as usize;
    assert!(record.length.abs_diff(expected) <= 1, "{}", record.length);
    assert_eq!(record.rewards.len(), record.length + 1);
    assert_eq!(record.queries as usize, record.length + 1);

    let last = *record.rewards.last().unwrap();
    let ta = record.length;
    let x = 1e-3 * 1.1f64.powi(ta as i32);
    let expected_penalty = -(((500 - ta) as f64) * x * x).sqrt();
    assert!((last - expected_penalty).abs() <= 1e-9 * expected_penalty.abs());
    for (t, r) in record.rewards[..ta].iter().enumerate() {
        let x = 1e-3 * 1.1f64.powi(t as i32);
        assert!((r + x).abs() <= 1e-12 * (1.0 + x));
    }
}

#[test]
fn episode_length_never_exceeds_horizon() {
    let env = make_toy2d(0.1).unwrap();
    let coder = LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec()).unwrap();
    let plant = Plant::new(&env, &coder).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for tf in [1, 7, 60, 300] {
        let s = spec(1e-3, tf);
        let record = run_episode(&plant, &mut |obs| Ok(vec![-obs[0]]), &s, &mut rng, 0.1).unwrap();
        assert!(record.length <= tf);
        assert!(record.rewards.len() <= tf);
    }
    let s = spec(1e-3, 3);
    let mut episode = Episode::start(vec![0.0, 0.0]);
    for _ in 0..3 {
        episode.step(&plant, &[0.0], &s).unwrap();
    }
    assert!(episode.step(&plant, &[0.0], &s).is_err());
}

#[test]
fn env_queries_count_every_full_system_step() {
    let toy = make_toy2d(0.1).unwrap();
    for method in [Method::Direct, Method::Umpo, Method::MfUmpo, Method::UmpoMa] {
        let (env, counter) = counting(&toy);
        let before = counter.steps.load(Ordering::SeqCst);
        let outcome = train(&env, &small_config(method, 600)).unwrap();
        let used = counter.steps.load(Ordering::SeqCst) - before;
        assert_eq!(outcome.env_queries, used, "{method}");
        if method == Method::UmpoMa {
            assert_eq!(used, 0);
        }
        if let Some(row) = outcome.log.last() {
            assert!(row.env_queries <= used);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let env = make_toy2d(0.1).unwrap();
    for method in [Method::Direct, Method::MfUmpo] {
        let config = small_config(method, 1500);
        let a = train(&env, &config).unwrap();
        let b = train(&env, &config).unwrap();
        assert_eq!(a.agent.actor, b.agent.actor);
        assert_eq!(a.agent.critic, b.agent.critic);
        assert_eq!(a.log.len(), b.log.len());
        assert!(a.log.iter().zip(&b.log).all(|(x, y)| x.same_except_time(y)));
        assert!(a
            .evaluations
            .iter()
            .zip(&b.evaluations)
            .all(|(x, y)| x.same_except_time(y)));
        assert_eq!(a.env_queries, b.env_queries);
    }
}

#[test]
fn zero_budget_returns_the_initial_policy() {
    let env = make_toy2d(0.1).unwrap();
    for method in [Method::Direct, Method::MfUmpo] {
        let config = TrainConfig {
            max_steps: 0,
            ..small_config(method, 0)
        };
        let outcome = train(&env, &config).unwrap();
        assert_eq!(outcome.steps, 0);
        assert!(outcome.log.is_empty());
        assert_eq!(outcome.env_queries, 0);
        let shape = AgentShape {
            obs_dim: if method == Method::Direct { 2 } else { 1 },
            action_dim: 1,
            actor_widths: config.actor_widths,
            actor_hidden: config.actor_hidden,
            actor_output: config.actor_output,
            critic_widths: config.actor_widths,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(SeedPlan::from_master(config.seed).agent_init);
        let fresh = Agent::new(&shape, DdpgConfig::default(), &mut rng).unwrap();
        assert_eq!(outcome.agent.actor, fresh.actor);
    }
}

#[test]
fn disturbance_window_includes_time_zero() {
    let p = DisturbanceProtocol::default();
    assert_eq!(p.steps(0.01), 31);
    assert_eq!(p.steps(0.1), 4);
    assert_eq!(p.steps(1.0), 1);
    let none = DisturbanceProtocol {
        duration: -1.0,
        ..p
    };
    assert_eq!(none.steps(0.01), 0);
}

#[test]
fn seed_plan_streams() {
    let plan = SeedPlan::from_master(7);
    assert_eq!(
        [
            plan.eigenspace,
            plan.env_noise,
            plan.agent_init,
            plan.exploration
        ],
        [7, 8, 9, 10]
    );
}

#[test]
fn bias_free_actor_keeps_the_steady_state_fixed() {
    let env = make_toy2d(0.1).unwrap();
    let config = TrainConfig {
        actor_hidden: Activation::Identity,
        actor_output: Activation::Identity,
        bias_free_actor: true,
        ..small_config(Method::Direct, 1200)
    };
    let outcome = train(&env, &config).unwrap();
    assert_eq!(outcome.status, RunStatus::Completed);
    let zero = vec![0.0; outcome.agent.actor.input_dim()];
    assert_eq!(outcome.agent.actor.forward(&zero).unwrap(), vec![0.0]);
}

#[test]
fn latent_pretraining_stabilizes_toy2d() {
    let env = make_toy2d(0.1).unwrap();
    let config = TrainConfig {
        actor_hidden: Activation::Identity,
        actor_output: Activation::Identity,
        bias_free_actor: true,
        tf: 100,
        ..small_config(Method::UmpoMa, 20_000)
    };
    let outcome = train(&env, &config).unwrap();
    assert_eq!(outcome.env_queries, 0);
    let rom = outcome.rom.as_ref().unwrap();
    let gain = policy_gain(&outcome.agent.actor, outcome.action_scale).unwrap();
    let closed = rom.jx[(0, 0)] + rom.ju[(0, 0)] * gain[(0, 0)];
    assert!(closed.abs() < 1.0, "latent closed loop {closed}");
    // Stopped by the stability rule well before the budget.
    assert!(outcome.steps < 20_000);

    let w = &outcome.basis.as_ref().unwrap().w;
    let full = closed_loop_spectrum(&env, w, &gain).unwrap();
    assert!(full.spectral_radius() < 1.0);
}

#[test]
fn closed_loop_spectrum_examples() {
    let env = make_toy2d(0.1).unwrap();
    let w = DenseMatrix::from_rows(&[&[1.0 / S5], &[2.0 / S5]]);
    for psi in [0.0, -0.6 * S5, -S5, 1.0] {
        let gain = DenseMatrix::from_rows(&[&[psi]]);
        let spectrum = closed_loop_spectrum(&env, &w, &gain).unwrap();
        let mut got = spectrum.moduli();
        let mut want = vec![0.9, (1.1 + psi / S5).abs()];
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() < 1e-12, "psi {psi}: {got:?} vs {want:?}");
        }
    }
    let gain = DenseMatrix::from_rows(&[&[-0.6 * S5]]);
    let radius = closed_loop_spectrum(&env, &w, &gain)
        .unwrap()
        .spectral_radius();
    assert!((radius - 0.9).abs() < 1e-12);
}

/// Greedy nearest matching of two eigenvalue multisets.
fn max_mismatch(got: &[Complex64], want: &[Complex64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let mut used = vec![false; got.len()];
    let mut worst: f64 = 0.0;
    for w in want {
        let (k, d) = got
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, g)| (k, (g - w).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn latent_feedback_moves_only_the_unstable_eigenvalues() {
    let envs = [
        make_toy2d(0.1).unwrap(),
        make_allen_cahn(100).unwrap(),
        make_tubular_reactor(198).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for env in &envs {
        let basis = estimate_basis(env, 0).unwrap();
        let rom = stabl::rom::assemble_rom_adjoint(env, &basis).unwrap();
        let jx = env.state_jacobian(env.xbar(), env.ubar()).unwrap();
        let open = dense_eigendecompose(&jx, EigenvectorRequest::None).unwrap();
        let stable: Vec<Complex64> = open
            .eigenvalues
            .iter()
            .copied()
            .filter(|l| l.norm() < 1.0 - 1e-9)
            .collect();
        assert_eq!(stable.len() + basis.nr(), env.nh());
        for _ in 0..50 {
            let gain =
                DenseMatrix::from_fn(env.np(), basis.nr(), |_, _| rng.random_range(-2.0..2.0));
            let full = closed_loop_spectrum(env, &basis.w, &gain).unwrap();
            let latent = latent_closed_loop_spectrum(&rom, &gain).unwrap();
            let mut want = stable.clone();
            want.extend(&latent.eigenvalues);
            let scale = 1.0 + gain.norm_max();
            let err = max_mismatch(&full.eigenvalues, &want);
            assert!(err <= 1e-6 * scale, "{}: {err:e}", env.name());
        }
    }
}

#[test]
fn train_log_round_trip() {
    let rows = vec![
        LogRow {
            step: 200,
            episode: 4,
            wall_time_s: 0.125,
            episode_length: 50,
            terminated_early: false,
            accumulated_reward: -1.25,
            normalized_reward: -0.1767766952966369,
            actor_loss: f64::NAN,
            critic_loss: f64::NAN,
            env_queries: 200,
        },
        LogRow {
            step: 233,
            episode: 5,
            wall_time_s: 1.5,
            episode_length: 32,
            terminated_early: true,
            accumulated_reward: -1234.5678901234567,
            normalized_reward: -3.0e-7,
            actor_loss: 0.5,
            critic_loss: 1e-12,
            env_queries: 233,
        },
    ];
    let mut buf = Vec::new();
    write_train_log(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(
        "step,episode,wall_time_s,episode_length,terminated_early,accumulated_reward,normalized_reward,actor_loss,critic_loss,env_queries\n"
    ));
    let back = read_train_log(&buf[..]).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in rows.iter().zip(&back) {
        assert!(a.same_except_time(b));
        assert!((a.wall_time_s - b.wall_time_s).abs() < 1e-6);
    }
    assert!(read_train_log("step,episode\n1,2\n".as_bytes()).is_err());
}

#[test]
fn disturbance_evaluation_of_a_stabilizing_policy() {
    let env = make_toy2d(0.1).unwrap();
    let coder = toy2d_coder(&env);
    // Latent closed loop 1.1 − 0.6 = 0.5.
    let actor = linear_actor(-0.6 * S5);
    let protocol = DisturbanceProtocol {
        duration: 5.0,
        ..DisturbanceProtocol::default()
    };
    let trace = evaluate_with_disturbance(&env, &coder, &actor, 10.0, &protocol, 500, 1e3).unwrap();
    assert_eq!(trace.disturbance_steps, 6);
    assert_eq!(trace.episode_length, 500);
    assert!(!trace.terminated_early);
    assert!(trace.initial_distance > 0.0);
    assert!(trace.final_distance <= 1e-6);
    assert_eq!(trace.outputs.len(), 507);

    let mut buf = Vec::new();
    write_eval_csv(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("time_index,output_0,output_1,control_0\n"));
    let (ys, us) = read_eval_csv(&buf[..]).unwrap();
    assert_eq!(ys, trace.outputs);
    assert_eq!(us, trace.controls);

    // Without feedback the same disturbance drives the state out.
    let idle = linear_actor(0.0);
    let trace = evaluate_with_disturbance(&env, &coder, &idle, 10.0, &protocol, 500, 1e3).unwrap();
    assert!(trace.terminated_early);
    assert!(trace.episode_length < 500);
}

#[test]
fn pretrained_agent_must_match_latent_dimensions() {
    let env = make_toy2d(0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = AgentShape {
        obs_dim: 3,
        action_dim: 1,
        actor_widths: (4, 4),
        actor_hidden: Activation::Relu,
        actor_output: Activation::Tanh,
        critic_widths: (4, 4),
    };
    let agent = Agent::new(&shape, DdpgConfig::default(), &mut rng).unwrap();
    assert!(train_from(&env, &small_config(Method::MfUmpo, 100), Some(agent)).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in [Method::Direct, Method::Umpo, Method::UmpoMa, Method::MfUmpo] {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("ppo".parse::<Method>().is_err());
}
