use std::cell::Cell;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agent::{policy_action, Mlp};
use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::linalg::norm_inf;
use crate::manifold::LinearCoder;

use super::reward::{penalty_from_parts, reward, RewardSpec};

/// Default early-termination threshold `1e3·(1 + ‖x̄‖∞)`.
pub fn default_blowup_threshold(xbar: &[f64]) -> f64 {
    1e3 * (1.0 + norm_inf(xbar))
}

/// An environment seen through an observation map, with a counter of every
/// call to its step function.
pub struct Plant<'a> {
    env: &'a Environment,
    coder: &'a LinearCoder,
    queries: Cell<u64>,
}

/// Result of one plant step.
#[derive(Debug, Clone)]
pub enum Advance {
    Next(Vec<f64>),
    /// The state left the admissible region or stopped being finite.
    Blown(Option<Vec<f64>>),
}

impl<'a> Plant<'a> {
    pub fn new(env: &'a Environment, coder: &'a LinearCoder) -> Result<Self> {
        check_len("coder state dim", env.nh(), coder.state_dim())?;
        check_len("coder control dim", env.np(), coder.center_u().len())?;
        Ok(Self {
            env,
            coder,
            queries: Cell::new(0),
        })
    }

    pub fn env(&self) -> &Environment {
        self.env
    }

    pub fn coder(&self) -> &LinearCoder {
        self.coder
    }

    pub fn queries(&self) -> u64 {
        self.queries.get()
    }

    pub fn observe(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.coder.encode(x)
    }

    /// `x⁺ = f(x, u)`, classifying blowups instead of failing on them.
    pub fn advance(&self, x: &[f64], u: &[f64], threshold: f64) -> Result<Advance> {
        self.queries.set(self.queries.get() + 1);
        match self.env.step(x, u) {
            Ok(next) => {
                let far = next
                    .iter()
                    .zip(self.env.xbar())
                    .any(|(a, b)| !((a - b).abs() <= threshold));
                if far {
                    let finite = next.iter().all(|v| v.is_finite());
                    Ok(Advance::Blown(finite.then_some(next)))
                } else {
                    Ok(Advance::Next(next))
                }
            }
            Err(Error::StateBlowup { .. }) => Ok(Advance::Blown(None)),
            Err(e) => Err(e),
        }
    }
}

/// One step of an episode as seen by the learner.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Observation after the step, or the pre-step one when the state
    /// blew up to non-finite values.
    pub next_obs: Vec<f64>,
    /// Early termination: no bootstrapping from `next_obs`.
    pub terminal: bool,
    /// The episode is over, by termination or by reaching `tf`.
    pub finished: bool,
}

/// Outcome of a complete episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// `ta` when terminated early, `tf` otherwise.
    pub length: usize,
    pub terminated_early: bool,
    pub rewards: Vec<f64>,
    pub accumulated: f64,
    pub normalized: f64,
    /// Plant steps taken during the episode.
    pub queries: u64,
    pub final_state: Vec<f64>,
}

/// Running episode on a plant.
#[derive(Debug, Clone)]
pub struct Episode {
    x: Vec<f64>,
    t: usize,
    rewards: Vec<f64>,
    terminated: bool,
}

impl Episode {
    pub fn start(x0: Vec<f64>) -> Self {
        Self {
            x: x0,
            t: 0,
            rewards: Vec::new(),
            terminated: false,
        }
    }

    /// `x̄ + scale·gaussian`.
    pub fn perturbed_start<R: Rng + ?Sized>(xbar: &[f64], scale: f64, rng: &mut R) -> Self {
        let x0 = xbar
            .iter()
            .map(|v| {
                let n: f64 = rng.sample(StandardNormal);
                v + scale * n
            })
            .collect();
        Self::start(x0)
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self, spec: &RewardSpec) -> bool {
        self.terminated || self.t >= spec.tf
    }

    /// Applies `u = ū + action` and scores `(x(t), u(t))`. When the step
    /// blows up the episode ends at `ta = t` and the reward is replaced by
    /// the penalty for the remaining `tf − ta` steps.
    pub fn step(&mut self, plant: &Plant, action: &[f64], spec: &RewardSpec) -> Result<StepInfo> {
        if self.is_finished(spec) {
            return Err(Error::invalid("episode already finished"));
        }
        let ubar = plant.env().ubar();
        check_len("action", ubar.len(), action.len())?;
        let u: Vec<f64> = ubar.iter().zip(action).map(|(a, b)| a + b).collect();
        let obs = plant.observe(&self.x)?;
        let (reward, next_obs, terminal) =
            match plant.advance(&self.x, &u, spec.blowup_threshold)? {
                Advance::Next(next) => {
                    let next_obs = plant.observe(&next)?;
                    self.x = next;
                    (reward(spec, &obs, &u, ubar), next_obs, false)
                }
                Advance::Blown(next) => {
                    let state_sq: f64 = obs.iter().map(|v| v * v).sum();
                    let control_sq: f64 = action.iter().map(|a| a * a).sum();
                    let next_obs = match next.as_deref().map(|n| plant.observe(n)).transpose()? {
                        Some(o) if o.iter().all(|v| v.is_finite()) => o,
                        _ => obs.clone(),
                    };
                    self.terminated = true;
                    (
                        penalty_from_parts(spec, state_sq, control_sq, self.t),
                        next_obs,
                        true,
                    )
                }
            };
        self.rewards.push(reward);
        if !terminal {
            self.t += 1;
        }
        Ok(StepInfo {
            obs,
            action: action.to_vec(),
            reward,
            next_obs,
            terminal,
            finished: self.is_finished(spec),
        })
    }

    pub fn finish(self, spec: &RewardSpec, nc: usize, queries: u64) -> EpisodeRecord {
        let accumulated: f64 = self.rewards.iter().sum();
        EpisodeRecord {
            length: self.t,
            terminated_early: self.terminated,
            normalized: super::reward::normalized_reward(accumulated, nc, spec.lambda_u, spec.tf),
            accumulated,
            rewards: self.rewards,
            queries,
            final_state: self.x,
        }
    }
}

/// Full control `K̃(Wᵀ(x − x̄)) + ū` for a bounded actor.
pub fn lifted_policy_action(
    coder: &LinearCoder,
    actor: &Mlp,
    x: &[f64],
    action_scale: f64,
) -> Result<Vec<f64>> {
    check_len("actor output", coder.center_u().len(), actor.output_dim())?;
    let z = coder.encode(x)?;
    let a = policy_action(actor, &z, action_scale)?;
    Ok(a.iter().zip(coder.center_u()).map(|(a, u)| a + u).collect())
}

/// Runs `policy` (observation to action deviation) from
/// `x̄ + init_noise·gaussian` for up to `tf` steps.
pub fn run_episode<R: Rng + ?Sized>(
    plant: &Plant,
    policy: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    spec: &RewardSpec,
    rng: &mut R,
    init_noise: f64,
) -> Result<EpisodeRecord> {
    let episode = Episode::perturbed_start(plant.env().xbar(), init_noise, rng);
    run_episode_from(plant, policy, spec, episode)
}

pub fn run_episode_from(
    plant: &Plant,
    policy: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    spec: &RewardSpec,
    mut episode: Episode,
) -> Result<EpisodeRecord> {
    let before = plant.queries();
    while !episode.is_finished(spec) {
        let obs = plant.observe(episode.state())?;
        let action = policy(&obs)?;
        episode.step(plant, &action, spec)?;
    }
    let nc = plant.coder().latent_dim();
    Ok(episode.finish(spec, nc, plant.queries() - before))
}
