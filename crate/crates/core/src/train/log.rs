use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "step,episode,wall_time_s,episode_length,terminated_early,accumulated_reward,normalized_reward,actor_loss,critic_loss,env_queries";

/// One logged episode. Loss columns hold the mean over the updates made
/// during the episode (`NaN` when there were none).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    pub wall_time_s: f64,
    pub episode_length: usize,
    pub terminated_early: bool,
    pub accumulated_reward: f64,
    pub normalized_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub env_queries: u64,
}

impl LogRow {
    /// Equality ignoring the wall-clock column; `NaN` losses compare equal.
    pub fn same_except_time(&self, other: &LogRow) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.step == other.step
            && self.episode == other.episode
            && self.episode_length == other.episode_length
            && self.terminated_early == other.terminated_early
            && same(self.accumulated_reward, other.accumulated_reward)
            && same(self.normalized_reward, other.normalized_reward)
            && same(self.actor_loss, other.actor_loss)
            && same(self.critic_loss, other.critic_loss)
            && self.env_queries == other.env_queries
    }
}

pub fn write_train_log<W: Write>(rows: &[LogRow], out: &mut W) -> Result<()> {
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{},{},{},{},{},{},{}",
            r.step,
            r.episode,
            r.wall_time_s,
            r.episode_length,
            r.terminated_early,
            r.accumulated_reward,
            r.normalized_reward,
            r.actor_loss,
            r.critic_loss,
            r.env_queries
        )?;
    }
    Ok(())
}

pub fn read_train_log<R: BufRead>(input: R) -> Result<Vec<LogRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != TRAIN_LOG_HEADER {
        return Err(Error::Parse(format!(
            "unexpected train log header `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Parse(format!(
                "train log row {}: expected 10 fields",
                k + 2
            )));
        }
        let bad = |what: &str| Error::Parse(format!("train log row {}: bad {what}", k + 2));
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad("step"))?,
            episode: f[1].parse().map_err(|_| bad("episode"))?,
            wall_time_s: f[2].parse().map_err(|_| bad("wall_time_s"))?,
            episode_length: f[3].parse().map_err(|_| bad("episode_length"))?,
            terminated_early: f[4].parse().map_err(|_| bad("terminated_early"))?,
            accumulated_reward: f[5].parse().map_err(|_| bad("accumulated_reward"))?,
            normalized_reward: f[6].parse().map_err(|_| bad("normalized_reward"))?,
            actor_loss: f[7].parse().map_err(|_| bad("actor_loss"))?,
            critic_loss: f[8].parse().map_err(|_| bad("critic_loss"))?,
            env_queries: f[9].parse().map_err(|_| bad("env_queries"))?,
        });
    }
    Ok(rows)
}
