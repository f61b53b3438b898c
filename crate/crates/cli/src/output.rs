//! Run directories: manifests and the files a training run leaves behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use stabl::env::Environment;
use stabl::manifold::write_basis_csv;
use stabl::train::{
    default_blowup_threshold, evaluate_with_disturbance, write_eval_csv, write_eval_summary,
    write_train_log, DisturbanceProtocol, EvalTrace, RomRoute, TrainConfig, TrainOutcome,
};

pub const MANIFEST: &str = "manifest.txt";

pub fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Writes `name` atomically enough for our purposes: build in memory, then
/// write in one go.
pub fn write_with(
    dir: &Path,
    name: &str,
    fill: impl FnOnce(&mut Vec<u8>) -> stabl::Result<()>,
) -> anyhow::Result<PathBuf> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let path = dir.join(name);
    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Every resolved setting of a run, in config key syntax.
pub fn resolved_entries(
    config: &TrainConfig,
    protocol: &DisturbanceProtocol,
    eval_tf: usize,
) -> Vec<(String, String)> {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "default".into());
    let pair = |p: (usize, usize)| format!("{},{}", p.0, p.1);
    let route = match config.rom_route {
        RomRoute::Adjoint => "adjoint".to_string(),
        RomRoute::Sysid(d) => format!("sysid({})", opt(d.map(|d| d.to_string()))),
    };
    [
        ("train.method", config.method.to_string()),
        ("train.seed", config.seed.to_string()),
        ("train.max_steps", config.max_steps.to_string()),
        (
            "train.pretrain_max_steps",
            opt(config.pretrain_max_steps.map(|v| v.to_string())),
        ),
        (
            "train.max_wall_time_s",
            opt(config.max_wall_time_s.map(|v| v.to_string())),
        ),
        ("train.offline_steps", config.offline_steps.to_string()),
        ("train.batch_size", config.batch_size.to_string()),
        ("train.buffer_capacity", config.buffer_capacity.to_string()),
        (
            "train.actor_learning_rate",
            config.actor_learning_rate.to_string(),
        ),
        (
            "train.critic_learning_rate",
            config.critic_learning_rate.to_string(),
        ),
        (
            "train.exploration_noise",
            config.exploration_noise.to_string(),
        ),
        ("train.discount", config.discount.to_string()),
        ("train.soft_update", config.soft_update.to_string()),
        ("train.tf", config.tf.to_string()),
        ("train.lambda_u", config.lambda_u.to_string()),
        ("train.init_noise", config.init_noise.to_string()),
        ("train.eval_noise", config.eval_noise.to_string()),
        ("train.eval_interval", config.eval_interval.to_string()),
        ("train.actor_widths", pair(config.actor_widths)),
        (
            "train.critic_widths",
            pair(config.critic_widths.unwrap_or(config.actor_widths)),
        ),
        ("train.actor_hidden", config.actor_hidden.to_string()),
        ("train.actor_output", config.actor_output.to_string()),
        ("train.bias_free_actor", config.bias_free_actor.to_string()),
        (
            "train.action_scale",
            opt(config.action_scale.map(|v| v.to_string())),
        ),
        (
            "train.blowup_threshold",
            opt(config.blowup_threshold.map(|v| v.to_string())),
        ),
        ("train.rom_route", route),
        ("eval.duration", protocol.duration.to_string()),
        ("eval.amplitude", protocol.amplitude.to_string()),
        ("eval.seed", protocol.seed.to_string()),
        ("eval.tf", eval_tf.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// `key = value` manifest of one run.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub run_id: String,
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub status: String,
    pub config: Vec<(String, String)>,
}

impl Manifest {
    pub fn write(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut out = create(&self.out_dir, MANIFEST)?;
        writeln!(out, "run.id = {}", self.run_id)?;
        writeln!(out, "run.method = {}", self.method)?;
        writeln!(out, "run.env = {}", self.env)?;
        writeln!(out, "run.seed = {}", self.seed)?;
        writeln!(out, "run.out_dir = {}", self.out_dir.display())?;
        writeln!(out, "run.status = {}", self.status)?;
        for (k, v) in &self.config {
            writeln!(out, "{k} = {v}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `run.status` of the manifest in `dir`, if there is one.
pub fn manifest_status(dir: &Path) -> Option<String> {
    let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == "run.status").then(|| v.trim().to_string())
    })
}

/// Logs, checkpoints, basis and model of a finished run, followed by the
/// disturbance evaluation of the final policy.
pub fn write_run(
    dir: &Path,
    env: &Environment,
    outcome: &TrainOutcome,
    config: &TrainConfig,
    protocol: &DisturbanceProtocol,
    eval_tf: usize,
) -> anyhow::Result<EvalTrace> {
    write_with(dir, "train_log.csv", |b| write_train_log(&outcome.log, b))?;
    write_with(dir, "eval_log.csv", |b| {
        write_train_log(&outcome.evaluations, b)
    })?;
    write_with(dir, "checkpoint.txt", |b| outcome.agent.write_checkpoint(b))?;
    if let Some(pre) = &outcome.pretrained {
        write_with(dir, "pretrained.txt", |b| pre.write_checkpoint(b))?;
    }
    if let Some(basis) = &outcome.basis {
        write_with(dir, "basis.csv", |b| write_basis_csv(&basis.w, b))?;
    }
    if let Some(rom) = &outcome.rom {
        write_with(dir, "rom.csv", |b| rom.write_csv(b))?;
    }
    let threshold = config
        .blowup_threshold
        .unwrap_or_else(|| default_blowup_threshold(env.xbar()));
    let trace = evaluate_with_disturbance(
        env,
        &outcome.coder,
        &outcome.agent.actor,
        outcome.action_scale,
        protocol,
        eval_tf,
        threshold,
    )?;
    write_with(dir, "eval.csv", |b| write_eval_csv(&trace, b))?;
    write_with(dir, "eval_summary.csv", |b| write_eval_summary(&trace, b))?;
    Ok(trace)
}
