//! Flat `section.key = value` configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Overrides given
//! as `key=value` replace file values. Keys are validated against a fixed
//! list so that a typo fails loudly instead of silently using a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::agent::Activation;
use crate::env::{make_toy2d, AllenCahnParams, Environment, ReactorParams, TodaParams};
use crate::error::{Error, Result};
use crate::train::{DisturbanceProtocol, RomRoute, TrainConfig};

/// Environments constructible by name.
pub const ENVIRONMENTS: [&str; 4] = ["toy2d", "allen_cahn", "tubular_reactor", "toda"];

const ENV_KEYS: &[&str] = &[
    "env.name",
    "env.toy2d.epsilon",
    "env.allen_cahn.grid_size",
    "env.allen_cahn.kappa",
    "env.allen_cahn.alpha1",
    "env.allen_cahn.alpha2",
    "env.allen_cahn.tau",
    "env.allen_cahn.ubar",
    "env.tubular_reactor.grid_size",
    "env.tubular_reactor.peclet",
    "env.tubular_reactor.damkohler",
    "env.tubular_reactor.gamma",
    "env.tubular_reactor.beta",
    "env.tubular_reactor.nu_ref",
    "env.tubular_reactor.heat_release",
    "env.tubular_reactor.tau",
    "env.tubular_reactor.ubar",
    "env.toda.particles",
    "env.toda.tau",
];

const TRAIN_KEYS: &[&str] = &[
    "train.method",
    "train.seed",
    "train.max_steps",
    "train.pretrain_max_steps",
    "train.max_wall_time_s",
    "train.offline_steps",
    "train.batch_size",
    "train.buffer_capacity",
    "train.actor_learning_rate",
    "train.critic_learning_rate",
    "train.exploration_noise",
    "train.discount",
    "train.soft_update",
    "train.tf",
    "train.lambda_u",
    "train.init_noise",
    "train.eval_noise",
    "train.eval_interval",
    "train.actor",
    "train.actor_widths",
    "train.critic_widths",
    "train.actor_hidden",
    "train.actor_output",
    "train.bias_free_actor",
    "train.action_scale",
    "train.blowup_threshold",
    "train.rom_route",
    "train.sysid_delta",
];

const OTHER_KEYS: &[&str] = &[
    "eval.duration",
    "eval.amplitude",
    "eval.seed",
    "eval.tf",
    "diagnose.epsilon",
    "diagnose.epsilons",
    "diagnose.budget",
    "diagnose.excitation",
    "diagnose.snapshot_seed",
    "diagnose.psi_min",
    "diagnose.psi_max",
    "diagnose.psi_points",
    "diagnose.trajectory_steps",
];

fn is_known(key: &str) -> bool {
    ENV_KEYS.contains(&key) || TRAIN_KEYS.contains(&key) || OTHER_KEYS.contains(&key)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", k + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", k + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|f| {
                        f.trim()
                            .parse::<T>()
                            .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn pair(&self, key: &str) -> Result<Option<(usize, usize)>> {
        match self.list::<usize>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(_) => Err(Error::Config(format!(
                "`{key}` needs two comma-separated values"
            ))),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// The configuration in file syntax, keys sorted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Builds the named environment with its `env.<name>.*` parameters.
    pub fn environment(&self, name: &str) -> Result<Environment> {
        let key = |k: &str| format!("env.{name}.{k}");
        match name {
            "toy2d" => make_toy2d(self.parsed_or(&key("epsilon"), 0.1)?),
            "allen_cahn" => {
                let d = AllenCahnParams::default();
                AllenCahnParams {
                    grid_size: self.parsed_or(&key("grid_size"), d.grid_size)?,
                    kappa: self.parsed_or(&key("kappa"), d.kappa)?,
                    alpha1: self.parsed_or(&key("alpha1"), d.alpha1)?,
                    alpha2: self.parsed_or(&key("alpha2"), d.alpha2)?,
                    tau: self.parsed_or(&key("tau"), d.tau)?,
                    ubar: self.parsed_or(&key("ubar"), d.ubar)?,
                }
                .build()
            }
            "tubular_reactor" => {
                let d = ReactorParams::default();
                let ubar = match self.list::<f64>(&key("ubar"))? {
                    None => d.ubar,
                    Some(v) if v.len() == 2 => [v[0], v[1]],
                    Some(_) => {
                        return Err(Error::Config(
                            "env.tubular_reactor.ubar needs two values".into(),
                        ))
                    }
                };
                ReactorParams {
                    grid_size: self.parsed_or(&key("grid_size"), d.grid_size)?,
                    peclet: self.parsed_or(&key("peclet"), d.peclet)?,
                    damkohler: self.parsed_or(&key("damkohler"), d.damkohler)?,
                    gamma: self.parsed_or(&key("gamma"), d.gamma)?,
                    beta: self.parsed_or(&key("beta"), d.beta)?,
                    nu_ref: self.parsed_or(&key("nu_ref"), d.nu_ref)?,
                    heat_release: self.parsed_or(&key("heat_release"), d.heat_release)?,
                    tau: self.parsed_or(&key("tau"), d.tau)?,
                    ubar,
                }
                .build()
            }
            "toda" => {
                let d = TodaParams::default();
                TodaParams {
                    particles: self.parsed_or(&key("particles"), d.particles)?,
                    tau: self.parsed_or(&key("tau"), d.tau)?,
                }
                .build()
            }
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected one of {})",
                ENVIRONMENTS.join(", ")
            ))),
        }
    }

    /// `train.*` on top of the defaults.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let mut c = TrainConfig {
            method: self.parsed_or("train.method", d.method)?,
            seed: self.parsed_or("train.seed", d.seed)?,
            max_steps: self.parsed_or("train.max_steps", d.max_steps)?,
            pretrain_max_steps: self.parsed("train.pretrain_max_steps")?,
            max_wall_time_s: self.parsed("train.max_wall_time_s")?,
            offline_steps: self.parsed_or("train.offline_steps", d.offline_steps)?,
            batch_size: self.parsed_or("train.batch_size", d.batch_size)?,
            buffer_capacity: self.parsed_or("train.buffer_capacity", d.buffer_capacity)?,
            actor_learning_rate: self
                .parsed_or("train.actor_learning_rate", d.actor_learning_rate)?,
            critic_learning_rate: self
                .parsed_or("train.critic_learning_rate", d.critic_learning_rate)?,
            exploration_noise: self.parsed_or("train.exploration_noise", d.exploration_noise)?,
            discount: self.parsed_or("train.discount", d.discount)?,
            soft_update: self.parsed_or("train.soft_update", d.soft_update)?,
            tf: self.parsed_or("train.tf", d.tf)?,
            lambda_u: self.parsed_or("train.lambda_u", d.lambda_u)?,
            init_noise: self.parsed_or("train.init_noise", d.init_noise)?,
            eval_noise: self.parsed_or("train.eval_noise", d.eval_noise)?,
            eval_interval: self.parsed_or("train.eval_interval", d.eval_interval)?,
            actor_widths: self.pair("train.actor_widths")?.unwrap_or(d.actor_widths),
            critic_widths: self.pair("train.critic_widths")?.or(d.critic_widths),
            actor_hidden: self.parsed_or("train.actor_hidden", d.actor_hidden)?,
            actor_output: self.parsed_or("train.actor_output", d.actor_output)?,
            bias_free_actor: self.parsed_or("train.bias_free_actor", d.bias_free_actor)?,
            action_scale: self.parsed("train.action_scale")?,
            blowup_threshold: self.parsed("train.blowup_threshold")?,
            rom_route: d.rom_route,
        };
        match self.get("train.actor").unwrap_or("mlp") {
            "mlp" => {}
            "linear" => {
                c.actor_hidden = Activation::Identity;
                c.actor_output = Activation::Identity;
                c.bias_free_actor = true;
            }
            other => {
                return Err(Error::Config(format!(
                    "train.actor must be mlp or linear, got `{other}`"
                )))
            }
        }
        c.rom_route = match self.get("train.rom_route").unwrap_or("adjoint") {
            "adjoint" => RomRoute::Adjoint,
            "sysid" => RomRoute::Sysid(self.parsed("train.sysid_delta")?),
            other => {
                return Err(Error::Config(format!(
                    "train.rom_route must be adjoint or sysid, got `{other}`"
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    /// `eval.*` disturbance protocol.
    pub fn disturbance_protocol(&self) -> Result<DisturbanceProtocol> {
        let d = DisturbanceProtocol::default();
        Ok(DisturbanceProtocol {
            duration: self.parsed_or("eval.duration", d.duration)?,
            amplitude: self.parsed_or("eval.amplitude", d.amplitude)?,
            seed: self.parsed_or("eval.seed", d.seed)?,
        })
    }

    /// Evaluation horizon: `eval.tf`, else `train.tf`.
    pub fn eval_tf(&self) -> Result<usize> {
        match self.parsed("eval.tf")? {
            Some(tf) => Ok(tf),
            None => Ok(self.parsed_or("train.tf", TrainConfig::default().tf)?),
        }
    }
}
