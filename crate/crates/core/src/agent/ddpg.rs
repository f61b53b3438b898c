use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

use super::{read_networks, Activation, Adam, Mlp, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub discount: f64,
    pub soft_update: f64,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub exploration_noise: f64,
    /// Bound on each action component; `tanh` outputs are scaled by it.
    pub action_scale: f64,
    /// Holds every actor bias at zero, so that `μ(0) = 0` for ReLU, tanh
    /// and identity actors.
    pub bias_free_actor: bool,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            soft_update: 0.005,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            exploration_noise: 1e-3,
            action_scale: 1.0,
            bias_free_actor: false,
        }
    }
}

/// Network dimensions of an agent. The critic always uses ReLU hidden
/// layers and an identity output on the concatenated `(obs, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentShape {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor_widths: (usize, usize),
    pub actor_hidden: Activation,
    pub actor_output: Activation,
    pub critic_widths: (usize, usize),
}

/// Actor, critic, their targets and optimizer moments.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_optimizer: Adam,
    pub critic_optimizer: Adam,
    pub config: DdpgConfig,
}

/// Maps a raw actor output to a bounded action.
pub fn bound_action(raw: &[f64], output: Activation, scale: f64) -> Vec<f64> {
    match output {
        Activation::Tanh => raw.iter().map(|v| v * scale).collect(),
        _ => raw.iter().map(|v| v.clamp(-scale, scale)).collect(),
    }
}

/// Bounded policy action `μ(obs)`.
pub fn policy_action(actor: &Mlp, obs: &[f64], scale: f64) -> Result<Vec<f64>> {
    Ok(bound_action(
        &actor.forward(obs)?,
        actor.output_activation(),
        scale,
    ))
}

/// `∂μ/∂raw` is diagonal: `scale` for tanh, the clip indicator otherwise.
fn bound_derivative(raw: f64, output: Activation, scale: f64) -> f64 {
    match output {
        Activation::Tanh => scale,
        _ => {
            if raw.abs() <= scale {
                1.0
            } else {
                0.0
            }
        }
    }
}

impl Agent {
    /// Fresh agent with the actor's last layer damped by `1e-3`.
    pub fn new<R: Rng + ?Sized>(
        shape: &AgentShape,
        config: DdpgConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Mlp::random(
            [
                shape.obs_dim,
                shape.actor_widths.0,
                shape.actor_widths.1,
                shape.action_dim,
            ],
            shape.actor_hidden,
            shape.actor_output,
            1e-3,
            rng,
        )?;
        let mut actor = actor;
        if config.bias_free_actor {
            let mut params = actor.params().to_vec();
            actor.zero_bias_entries(&mut params);
            actor.params_mut().copy_from_slice(&params);
        }
        let critic = Mlp::random(
            [
                shape.obs_dim + shape.action_dim,
                shape.critic_widths.0,
                shape.critic_widths.1,
                1,
            ],
            Activation::Relu,
            Activation::Identity,
            1.0,
            rng,
        )?;
        Self::from_networks(actor, critic, config)
    }

    /// Agent whose targets start as copies of the principals.
    pub fn from_networks(actor: Mlp, critic: Mlp, config: DdpgConfig) -> Result<Self> {
        if critic.input_dim() != actor.input_dim() + actor.output_dim() || critic.output_dim() != 1
        {
            return Err(Error::invalid("critic does not match actor dimensions"));
        }
        Ok(Self {
            actor_optimizer: Adam::new(actor.param_count(), config.actor_learning_rate),
            critic_optimizer: Adam::new(critic.param_count(), config.critic_learning_rate),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Resets both optimizers' moments, keeping all networks.
    pub fn reset_optimizers(&mut self) {
        self.actor_optimizer = Adam::new(self.actor.param_count(), self.config.actor_learning_rate);
        self.critic_optimizer =
            Adam::new(self.critic.param_count(), self.config.critic_learning_rate);
    }

    /// `μ(obs)` plus gaussian exploration noise when `explore`, clipped to
    /// `±action_scale`.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "observation",
            });
        }
        let scale = self.config.action_scale;
        let mut action = policy_action(&self.actor, obs, scale)?;
        if explore && self.config.exploration_noise > 0.0 {
            for a in &mut action {
                let n: f64 = rng.sample(StandardNormal);
                *a = (*a + self.config.exploration_noise * n).clamp(-scale, scale);
            }
        }
        Ok(action)
    }

    /// One critic step, one actor step and a soft target update. Returns
    /// `(actor_loss, critic_loss)`.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let (nobs, nact) = (self.obs_dim(), self.action_dim());
        let scale = self.config.action_scale;
        let inv = 1.0 / batch.len() as f64;

        let mut critic_grad = vec![0.0; self.critic.param_count()];
        let mut critic_loss = 0.0;
        for t in batch {
            check_len("transition observation", nobs, t.obs.len())?;
            check_len("transition action", nact, t.action.len())?;
            let target = if t.done {
                t.reward
            } else {
                let next_action = policy_action(&self.target_actor, &t.next_obs, scale)?;
                let q_next = self
                    .target_critic
                    .forward(&concat(&t.next_obs, &next_action))?[0];
                t.reward + self.config.discount * q_next
            };
            let input = concat(&t.obs, &t.action);
            let err = self.critic.forward(&input)?[0] - target;
            critic_loss += err * err * inv;
            self.critic
                .backward_accumulate(&input, &[2.0 * err * inv], &mut critic_grad)?;
        }
        if !critic_loss.is_finite() {
            return Err(Error::DivergedUpdate { what: "critic" });
        }
        self.critic_optimizer
            .step(self.critic.params_mut(), &critic_grad);

        let mut actor_grad = vec![0.0; self.actor.param_count()];
        let mut scratch = vec![0.0; self.critic.param_count()];
        let mut actor_loss = 0.0;
        for t in batch {
            let raw = self.actor.forward(&t.obs)?;
            let action = bound_action(&raw, self.actor.output_activation(), scale);
            let input = concat(&t.obs, &action);
            actor_loss -= self.critic.forward(&input)?[0] * inv;
            let dq = self
                .critic
                .backward_accumulate(&input, &[-inv], &mut scratch)?;
            let upstream: Vec<f64> = dq[nobs..]
                .iter()
                .zip(&raw)
                .map(|(g, &r)| g * bound_derivative(r, self.actor.output_activation(), scale))
                .collect();
            self.actor
                .backward_accumulate(&t.obs, &upstream, &mut actor_grad)?;
        }
        if !actor_loss.is_finite() {
            return Err(Error::DivergedUpdate { what: "actor" });
        }
        if self.config.bias_free_actor {
            self.actor.zero_bias_entries(&mut actor_grad);
        }
        self.actor_optimizer
            .step(self.actor.params_mut(), &actor_grad);

        self.soft_update_targets();
        Ok((actor_loss, critic_loss))
    }

    /// `p_target ← τ·p + (1 − τ)·p_target` for both networks.
    pub fn soft_update_targets(&mut self) {
        let tau = self.config.soft_update;
        for (target, source) in [
            (&mut self.target_actor, &self.actor),
            (&mut self.target_critic, &self.critic),
        ] {
            for (t, s) in target.params_mut().iter_mut().zip(source.params()) {
                *t = tau * s + (1.0 - tau) * *t;
            }
        }
    }

    /// Writes actor, critic, target actor and target critic blocks.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        for net in [
            &self.actor,
            &self.critic,
            &self.target_actor,
            &self.target_critic,
        ] {
            net.write_text(out)?;
        }
        Ok(())
    }

    /// Restores networks from a checkpoint; optimizer moments start fresh.
    pub fn read_checkpoint<R: BufRead>(input: R, config: DdpgConfig) -> Result<Self> {
        let nets = read_networks(input)?;
        let [actor, critic, target_actor, target_critic]: [Mlp; 4] =
            nets.try_into().map_err(|v: Vec<Mlp>| {
                Error::Parse(format!("checkpoint has {} networks, expected 4", v.len()))
            })?;
        if !actor.same_architecture(&target_actor) || !critic.same_architecture(&target_critic) {
            return Err(Error::Parse("target network architecture differs".into()));
        }
        let mut agent = Self::from_networks(actor, critic, config)?;
        agent.target_actor = target_actor;
        agent.target_critic = target_critic;
        Ok(agent)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}
