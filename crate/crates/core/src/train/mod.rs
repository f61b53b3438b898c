//! Episodic training of stabilizing policies.
//!
//! Four variants share one loop: `direct` learns on full states, `umpo`
//! learns on latent coordinates of the full system, `umpo-ma` learns on the
//! latent linear model only, and `mf-umpo` pre-trains like `umpo-ma` and
//! then fine-tunes on the full system starting from the pre-trained agent.

mod episode;
mod evaluate;
mod log;
mod reward;

pub use episode::{
    default_blowup_threshold, lifted_policy_action, run_episode, run_episode_from, Advance,
    Episode, EpisodeRecord, Plant, StepInfo,
};
pub use evaluate::{
    evaluate_with_disturbance, read_eval_csv, write_eval_csv, write_eval_summary,
    DisturbanceProtocol, EvalTrace, EVAL_SUMMARY_HEADER,
};
pub use log::{read_train_log, write_train_log, LogRow, TRAIN_LOG_HEADER};
pub use reward::{logmean, normalized_reward, reward, termination_penalty, RewardSpec};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Activation, Agent, AgentShape, DdpgConfig, Mlp, ReplayBuffer, Transition};
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_eigendecompose, norm_inf, DenseMatrix, EigenvectorRequest, Spectrum};
use crate::manifold::{arnoldi_unstable_basis, ArnoldiOptions, LinearCoder, UnstableBasis};
use crate::rom::{assemble_rom_adjoint, assemble_rom_sysid, LatentModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Umpo,
    UmpoMa,
    MfUmpo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Direct, Method::Umpo, Method::UmpoMa, Method::MfUmpo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Umpo => "umpo",
            Method::UmpoMa => "umpo-ma",
            Method::MfUmpo => "mf-umpo",
        }
    }

    /// Whether the policy observes latent coordinates.
    pub fn is_latent(self) -> bool {
        self != Method::Direct
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// How the latent linear model is assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RomRoute {
    Adjoint,
    /// System identification with the given probe size (`None` picks the
    /// default `√ε·(1 + ‖x̄‖∞)`).
    Sysid(Option<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    pub max_steps: u64,
    /// Step budget of the latent pre-training of `mf-umpo` (defaults to
    /// `max_steps`); the remainder goes to fine-tuning.
    pub pretrain_max_steps: Option<u64>,
    pub max_wall_time_s: Option<f64>,
    /// Steps taken with the initial policy before updates start.
    pub offline_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub exploration_noise: f64,
    pub discount: f64,
    pub soft_update: f64,
    pub tf: usize,
    pub lambda_u: f64,
    /// Gaussian noise on the initial state of each training episode.
    pub init_noise: f64,
    /// Gaussian noise defining the fixed initial state of evaluations.
    pub eval_noise: f64,
    pub eval_interval: u64,
    pub actor_widths: (usize, usize),
    pub critic_widths: Option<(usize, usize)>,
    pub actor_hidden: Activation,
    pub actor_output: Activation,
    /// Keep actor biases at zero so the steady state stays a fixed point.
    pub bias_free_actor: bool,
    pub action_scale: Option<f64>,
    pub blowup_threshold: Option<f64>,
    pub rom_route: RomRoute,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::MfUmpo,
            seed: 0,
            max_steps: 100_000,
            pretrain_max_steps: None,
            max_wall_time_s: None,
            offline_steps: 256,
            batch_size: 256,
            buffer_capacity: 100_000,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            exploration_noise: 1e-3,
            discount: 0.99,
            soft_update: 0.005,
            tf: 200,
            lambda_u: 1e-3,
            init_noise: 0.0,
            eval_noise: 1e-3,
            eval_interval: 1000,
            actor_widths: (20, 10),
            critic_widths: None,
            actor_hidden: Activation::Relu,
            actor_output: Activation::Tanh,
            bias_free_actor: false,
            action_scale: None,
            blowup_threshold: None,
            rom_route: RomRoute::Adjoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.tf == 0 {
            return bad("train.tf must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("train.batch_size and train.buffer_capacity must be positive");
        }
        if !(self.lambda_u >= 0.0) || !(self.exploration_noise >= 0.0) {
            return bad("train.lambda_u and train.exploration_noise must be non-negative");
        }
        if !(self.actor_learning_rate > 0.0) || !(self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.soft_update) || !(0.0..=1.0).contains(&self.discount) {
            return bad("train.soft_update and train.discount must lie in [0, 1]");
        }
        if self.actor_widths.0 == 0 || self.actor_widths.1 == 0 {
            return bad("train.actor_widths must be positive");
        }
        if self.eval_interval == 0 {
            return bad("train.eval_interval must be positive");
        }
        if let Some(s) = self.action_scale {
            if !(s > 0.0) {
                return bad("action_scale must be positive");
            }
        }
        Ok(())
    }

    /// Default bound `2‖ū‖∞ + 1`.
    pub fn resolved_action_scale(&self, ubar: &[f64]) -> f64 {
        self.action_scale.unwrap_or(2.0 * norm_inf(ubar) + 1.0)
    }

    fn ddpg(&self, action_scale: f64) -> DdpgConfig {
        DdpgConfig {
            discount: self.discount,
            soft_update: self.soft_update,
            actor_learning_rate: self.actor_learning_rate,
            critic_learning_rate: self.critic_learning_rate,
            exploration_noise: self.exploration_noise,
            action_scale,
            bias_free_actor: self.bias_free_actor,
        }
    }
}

/// Seeds of the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub eigenspace: u64,
    pub env_noise: u64,
    pub agent_init: u64,
    pub exploration: u64,
}

impl SeedPlan {
    pub fn from_master(seed: u64) -> Self {
        Self {
            eigenspace: seed,
            env_noise: seed.wrapping_add(1),
            agent_init: seed.wrapping_add(2),
            exploration: seed.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A non-finite loss aborted training.
    Diverged(String),
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub method: Method,
    pub agent: Agent,
    /// Encoder used by the final policy (identity for `direct`).
    pub coder: LinearCoder,
    pub basis: Option<UnstableBasis>,
    pub rom: Option<LatentModel>,
    /// Agent at the end of latent pre-training (`umpo-ma`, `mf-umpo`).
    pub pretrained: Option<Agent>,
    /// Training episodes.
    pub log: Vec<LogRow>,
    /// Periodic deterministic evaluations, same schema as `log`.
    pub evaluations: Vec<LogRow>,
    pub status: RunStatus,
    pub steps: u64,
    /// Steps of the full-order system, evaluations included.
    pub env_queries: u64,
    pub action_scale: f64,
}

impl TrainOutcome {
    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }
}

/// Eigenvalues of `Jₓ + Jᵤ·G·Wᵀ` at the steady state, `G` mapping latent
/// coordinates to control deviations.
pub fn closed_loop_spectrum(
    env: &Environment,
    w: &DenseMatrix,
    gain: &DenseMatrix,
) -> Result<Spectrum> {
    closed_loop_spectrum_with(
        &env.state_jacobian(env.xbar(), env.ubar())?,
        &env.control_jacobian(env.xbar(), env.ubar())?,
        w,
        gain,
    )
}

/// [`closed_loop_spectrum`] from assembled Jacobians.
pub fn closed_loop_spectrum_with(
    jx: &DenseMatrix,
    ju: &DenseMatrix,
    w: &DenseMatrix,
    gain: &DenseMatrix,
) -> Result<Spectrum> {
    check_len("gain rows", ju.cols(), gain.rows())?;
    check_len("gain columns", w.cols(), gain.cols())?;
    let feedback = ju.matmul(&gain.matmul(&w.transpose())?)?;
    dense_eigendecompose(&jx.add(&feedback)?, EigenvectorRequest::None)
}

/// Eigenvalues of the latent closed loop `J̃ₓ + J̃ᵤ·G`.
pub fn latent_closed_loop_spectrum(rom: &LatentModel, gain: &DenseMatrix) -> Result<Spectrum> {
    check_len("gain rows", rom.np(), gain.rows())?;
    check_len("gain columns", rom.nr(), gain.cols())?;
    dense_eigendecompose(
        &rom.jx.add(&rom.ju.matmul(gain)?)?,
        EigenvectorRequest::None,
    )
}

/// Linearization `∂μ/∂z` at `z = 0` of the bounded policy.
pub fn policy_gain(actor: &Mlp, action_scale: f64) -> Result<DenseMatrix> {
    let zero = vec![0.0; actor.input_dim()];
    let jac = actor.input_jacobian(&zero)?;
    let raw = actor.forward(&zero)?;
    Ok(DenseMatrix::from_fn(jac.rows(), jac.cols(), |i, j| {
        let d = match actor.output_activation() {
            Activation::Tanh => action_scale,
            _ if raw[i].abs() <= action_scale => 1.0,
            _ => 0.0,
        };
        d * jac[(i, j)]
    }))
}

/// Left unstable basis of the full system at its steady state.
pub fn estimate_basis(env: &Environment, seed: u64) -> Result<UnstableBasis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let options = ArnoldiOptions::for_expected_modes(env.spec().nr_expected);
    arnoldi_unstable_basis(env, env.xbar(), env.ubar(), &options, &mut rng)
}

pub fn assemble_rom(
    env: &Environment,
    basis: &UnstableBasis,
    route: RomRoute,
) -> Result<LatentModel> {
    match route {
        RomRoute::Adjoint => assemble_rom_adjoint(env, basis),
        RomRoute::Sysid(delta) => {
            let delta = delta.unwrap_or_else(|| crate::rom::default_sysid_delta(env.xbar()));
            assemble_rom_sysid(env, basis, delta)
        }
    }
}

/// Trains a policy on `env` with the configured method.
pub fn train(env: &Environment, config: &TrainConfig) -> Result<TrainOutcome> {
    train_from(env, config, None)
}

/// Fixed initial state of the periodic evaluation episodes of a run.
pub fn evaluation_start(env: &Environment, config: &TrainConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SeedPlan::from_master(config.seed).env_noise);
    draw_evaluation_start(env, config, &mut rng)
}

fn draw_evaluation_start(
    env: &Environment,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    Episode::perturbed_start(env.xbar(), config.eval_noise, rng)
        .state()
        .to_vec()
}

/// Like [`train`]; for `mf-umpo` a supplied `pretrained` agent replaces the
/// latent pre-training.
pub fn train_from(
    env: &Environment,
    config: &TrainConfig,
    pretrained: Option<Agent>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let seeds = SeedPlan::from_master(config.seed);
    let action_scale = config.resolved_action_scale(env.ubar());
    let threshold = config
        .blowup_threshold
        .unwrap_or_else(|| default_blowup_threshold(env.xbar()));
    let spec = RewardSpec::new(config.lambda_u, config.tf, threshold)?;

    let (coder, basis) = if config.method.is_latent() {
        let basis = estimate_basis(env, seeds.eigenspace)?;
        if basis.nr() == 0 {
            return Err(Error::invalid("the steady state has no unstable modes"));
        }
        (basis.coder(env.xbar(), env.ubar())?, Some(basis))
    } else {
        (
            LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec())?,
            None,
        )
    };
    let rom = match (&basis, config.method) {
        (Some(b), Method::UmpoMa | Method::MfUmpo) => Some(assemble_rom(env, b, config.rom_route)?),
        _ => None,
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.env_noise);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.agent_init);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(seeds.exploration);
    let eval_start = draw_evaluation_start(env, config, &mut noise_rng);

    let shape = AgentShape {
        obs_dim: coder.latent_dim(),
        action_dim: env.np(),
        actor_widths: config.actor_widths,
        actor_hidden: config.actor_hidden,
        actor_output: config.actor_output,
        critic_widths: config.critic_widths.unwrap_or(config.actor_widths),
    };
    let mut agent = match &pretrained {
        Some(a) => {
            if a.obs_dim() != shape.obs_dim || a.action_dim() != shape.action_dim {
                return Err(Error::invalid(
                    "pretrained agent does not match the latent dimensions",
                ));
            }
            let mut a = a.clone();
            a.config = config.ddpg(action_scale);
            a.reset_optimizers();
            a
        }
        None => Agent::new(&shape, config.ddpg(action_scale), &mut init_rng)?,
    };

    let mut progress = Progress {
        step: 0,
        episode: 0,
        clock: Instant::now(),
        full_queries: 0,
        log: Vec::new(),
        evaluations: Vec::new(),
        wall_limit: config.max_wall_time_s,
    };
    let mut status = RunStatus::Completed;
    let mut pretrained_agent = pretrained.clone();

    let full_plant = Plant::new(env, &coder)?;
    if let (Some(rom), None) = (&rom, &pretrained) {
        let rom_env = rom.as_environment(&format!("{}_latent", env.name()))?;
        let rom_coder = LinearCoder::identity(vec![0.0; rom.nr()], vec![0.0; rom.np()])?;
        let rom_plant = Plant::new(&rom_env, &rom_coder)?;
        let rom_threshold = config
            .blowup_threshold
            .unwrap_or_else(|| default_blowup_threshold(&[]));
        let rom_spec = RewardSpec::new(config.lambda_u, config.tf, rom_threshold)?;
        let budget = config
            .pretrain_max_steps
            .unwrap_or(config.max_steps)
            .min(config.max_steps);
        let phase = Phase {
            plant: &rom_plant,
            is_full: false,
            spec: rom_spec,
            eval_start: coder.encode(&eval_start)?,
            stop_rule: Some(rom),
            budget,
        };
        let end = phase.run(
            &mut agent,
            config,
            &mut progress,
            &mut noise_rng,
            &mut explore_rng,
        )?;
        if let PhaseEnd::Diverged(msg) = &end {
            status = RunStatus::Diverged(msg.clone());
        }
        pretrained_agent = Some(agent.clone());
        if config.method == Method::MfUmpo && status == RunStatus::Completed {
            agent.reset_optimizers();
        }
    }

    let fine_tune = matches!(
        config.method,
        Method::Direct | Method::Umpo | Method::MfUmpo
    );
    if fine_tune && status == RunStatus::Completed {
        let phase = Phase {
            plant: &full_plant,
            is_full: true,
            spec,
            eval_start: eval_start.clone(),
            stop_rule: None,
            budget: config.max_steps.saturating_sub(progress.step),
        };
        if let PhaseEnd::Diverged(msg) = phase.run(
            &mut agent,
            config,
            &mut progress,
            &mut noise_rng,
            &mut explore_rng,
        )? {
            status = RunStatus::Diverged(msg);
        }
    }

    Ok(TrainOutcome {
        method: config.method,
        agent,
        coder,
        basis,
        rom,
        pretrained: pretrained_agent,
        log: progress.log,
        evaluations: progress.evaluations,
        status,
        steps: progress.step,
        env_queries: progress.full_queries,
        action_scale,
    })
}

struct Progress {
    step: u64,
    episode: u64,
    clock: Instant,
    /// Full-system queries of finished phases.
    full_queries: u64,
    log: Vec<LogRow>,
    evaluations: Vec<LogRow>,
    wall_limit: Option<f64>,
}

impl Progress {
    fn out_of_time(&self) -> bool {
        self.wall_limit
            .is_some_and(|limit| self.clock.elapsed().as_secs_f64() >= limit)
    }
}

enum PhaseEnd {
    Budget,
    Stopped,
    Diverged(String),
}

struct Phase<'a> {
    plant: &'a Plant<'a>,
    is_full: bool,
    spec: RewardSpec,
    eval_start: Vec<f64>,
    /// Latent model whose linearized closed loop must be stable, together
    /// with a full-length evaluation, to stop early.
    stop_rule: Option<&'a LatentModel>,
    budget: u64,
}

impl Phase<'_> {
    fn queries(&self, progress: &Progress) -> u64 {
        progress.full_queries
            + if self.is_full {
                self.plant.queries()
            } else {
                0
            }
    }

    fn evaluate(&self, agent: &Agent) -> Result<EpisodeRecord> {
        let scale = agent.config.action_scale;
        let mut policy = |obs: &[f64]| crate::agent::policy_action(&agent.actor, obs, scale);
        run_episode_from(
            self.plant,
            &mut policy,
            &self.spec,
            Episode::start(self.eval_start.clone()),
        )
    }

    fn record_evaluation(&self, agent: &Agent, progress: &mut Progress) -> Result<EpisodeRecord> {
        let record = self.evaluate(agent)?;
        progress.evaluations.push(LogRow {
            step: progress.step,
            episode: progress.episode,
            wall_time_s: progress.clock.elapsed().as_secs_f64(),
            episode_length: record.length,
            terminated_early: record.terminated_early,
            accumulated_reward: record.accumulated,
            normalized_reward: record.normalized,
            actor_loss: f64::NAN,
            critic_loss: f64::NAN,
            env_queries: self.queries(progress),
        });
        Ok(record)
    }

    fn stop_rule_met(&self, agent: &Agent, progress: &mut Progress) -> Result<bool> {
        let Some(rom) = self.stop_rule else {
            return Ok(false);
        };
        let record = self.record_evaluation(agent, progress)?;
        if record.terminated_early {
            return Ok(false);
        }
        let gain = policy_gain(&agent.actor, agent.config.action_scale)?;
        Ok(latent_closed_loop_spectrum(rom, &gain)?.spectral_radius() < 1.0)
    }

    fn run(
        &self,
        agent: &mut Agent,
        config: &TrainConfig,
        progress: &mut Progress,
        noise_rng: &mut ChaCha8Rng,
        explore_rng: &mut ChaCha8Rng,
    ) -> Result<PhaseEnd> {
        let result = self.run_inner(agent, config, progress, noise_rng, explore_rng);
        if self.is_full {
            progress.full_queries += self.plant.queries();
        }
        result
    }

    fn run_inner(
        &self,
        agent: &mut Agent,
        config: &TrainConfig,
        progress: &mut Progress,
        noise_rng: &mut ChaCha8Rng,
        explore_rng: &mut ChaCha8Rng,
    ) -> Result<PhaseEnd> {
        if self.budget == 0 {
            return Ok(PhaseEnd::Budget);
        }
        if self.stop_rule_met(agent, progress)? {
            return Ok(PhaseEnd::Stopped);
        }
        let mut buffer = ReplayBuffer::new(config.buffer_capacity);
        let xbar = self.plant.env().xbar();
        let mut episode = Episode::perturbed_start(xbar, config.init_noise, noise_rng);
        let (mut actor_sum, mut critic_sum, mut updates) = (0.0, 0.0, 0u64);
        let mut taken = 0u64;
        while taken < self.budget && !progress.out_of_time() {
            let obs = self.plant.observe(episode.state())?;
            let action = agent.select_action(&obs, true, explore_rng)?;
            let info = episode.step(self.plant, &action, &self.spec)?;
            buffer.push(Transition {
                obs: info.obs,
                action: info.action,
                reward: info.reward,
                next_obs: info.next_obs,
                done: info.terminal,
            });
            taken += 1;
            progress.step += 1;

            if taken > config.offline_steps {
                let batch = buffer.sample(config.batch_size, explore_rng);
                match agent.update(&batch) {
                    Ok((a, c)) => {
                        actor_sum += a;
                        critic_sum += c;
                        updates += 1;
                    }
                    Err(Error::DivergedUpdate { what }) => {
                        return Ok(PhaseEnd::Diverged(format!("non-finite {what} loss")));
                    }
                    Err(e) => return Err(e),
                }
            }

            if info.finished {
                let nc = self.plant.coder().latent_dim();
                let done = std::mem::replace(
                    &mut episode,
                    Episode::perturbed_start(xbar, config.init_noise, noise_rng),
                );
                let record = done.finish(&self.spec, nc, 0);
                let mean = |s: f64| {
                    if updates > 0 {
                        s / updates as f64
                    } else {
                        f64::NAN
                    }
                };
                progress.log.push(LogRow {
                    step: progress.step,
                    episode: progress.episode,
                    wall_time_s: progress.clock.elapsed().as_secs_f64(),
                    episode_length: record.length,
                    terminated_early: record.terminated_early,
                    accumulated_reward: record.accumulated,
                    normalized_reward: record.normalized,
                    actor_loss: mean(actor_sum),
                    critic_loss: mean(critic_sum),
                    env_queries: self.queries(progress),
                });
                progress.episode += 1;
                (actor_sum, critic_sum, updates) = (0.0, 0.0, 0);
                if taken > config.offline_steps && self.stop_rule_met(agent, progress)? {
                    return Ok(PhaseEnd::Stopped);
                }
            }
            if progress.step.is_multiple_of(config.eval_interval) {
                self.record_evaluation(agent, progress)?;
            }
        }
        Ok(PhaseEnd::Budget)
    }
}
