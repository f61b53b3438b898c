use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::Args;

use stabl::agent::{Agent, DdpgConfig};
use stabl::config::Config;
use stabl::diagnostics::{
    angle_vs_epsilon, converged_pca_coder, pca_policy_sweep, write_angle_csv, write_sweep_csv,
    SnapshotProtocol,
};
use stabl::env::{make_toy2d, Environment};
use stabl::manifold::{
    dense_unstable_basis, read_basis_csv, write_basis_csv, write_eigenvalue_csv, LinearCoder,
    DEFAULT_MARGIN,
};
use stabl::train::{
    assemble_rom, default_blowup_threshold, estimate_basis, evaluate_with_disturbance, train_from,
    write_eval_csv, write_eval_summary, Method, RunStatus,
};

use crate::output::{resolved_entries, write_run, write_with, Manifest};
use crate::Global;

/// Bad invocation or input file (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A training run stopped on a non-finite loss (exit code 3).
#[derive(Debug)]
pub struct Diverged(pub String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run diverged: {}", self.0)
    }
}

impl std::error::Error for Diverged {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    use stabl::Error as E;
    if e.downcast_ref::<Diverged>().is_some() {
        return 3;
    }
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(E::DivergedUpdate { .. }) => 3,
        Some(
            E::Config(_)
            | E::ConfigNotFound(_)
            | E::InvalidArgument(_)
            | E::Parse(_)
            | E::DimensionMismatch { .. },
        ) => 2,
        _ => 1,
    }
}

#[derive(Args, Debug, Clone)]
pub struct EnvArgs {
    /// toy2d, allen_cahn, tubular_reactor or toda (default: `env.name`).
    #[arg(long)]
    pub env: Option<String>,
}

impl EnvArgs {
    pub fn resolve(&self, config: &Config) -> anyhow::Result<(String, Environment)> {
        let name = self
            .env
            .clone()
            .or_else(|| config.get("env.name").map(str::to_string))
            .ok_or_else(|| Usage("no environment given (use --env or env.name)".into()))?;
        let env = config.environment(&name)?;
        Ok((name, env))
    }
}

#[derive(Args, Debug)]
pub struct RomArgs {
    #[command(flatten)]
    pub env: EnvArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// direct, umpo, umpo-ma or mf-umpo (default: `train.method`).
    #[arg(long)]
    pub method: Option<String>,
    /// Checkpoint replacing latent pre-training (mf-umpo only).
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Basis CSV of a latent policy; omit for a full-state policy.
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn open_input(path: &Path) -> anyhow::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Usage(format!("cannot open {}: {e}", path.display())).into())
}

fn seed_of(config: &Config) -> anyhow::Result<u64> {
    Ok(config.parsed("train.seed")?.unwrap_or(0))
}

pub fn eigenspace(global: &Global, args: &EnvArgs) -> anyhow::Result<()> {
    let config = global.load_config()?;
    let (name, env) = args.resolve(&config)?;
    let basis = estimate_basis(&env, seed_of(&config)?)?;
    ensure_dir(&global.out_dir)?;
    write_with(&global.out_dir, "basis.csv", |b| {
        write_basis_csv(&basis.w, b)
    })?;
    write_with(&global.out_dir, "eigenvalues.csv", |b| {
        write_eigenvalue_csv(&basis, b)
    })?;
    global.say(format!("{name}: nr = {}", basis.nr()));
    for l in &basis.eigenvalues {
        global.say(format!(
            "  eigenvalue {} {:+}i (|λ| = {})",
            l.re,
            l.im,
            l.norm()
        ));
    }
    Ok(())
}

pub fn rom(global: &Global, args: &RomArgs) -> anyhow::Result<()> {
    let config = global.load_config()?;
    let (name, env) = args.env.resolve(&config)?;
    let train = config.train_config()?;
    let basis = estimate_basis(&env, seed_of(&config)?)?;
    let model = assemble_rom(&env, &basis, train.rom_route)?;
    ensure_dir(&global.out_dir)?;
    write_with(&global.out_dir, "basis.csv", |b| {
        write_basis_csv(&basis.w, b)
    })?;
    write_with(&global.out_dir, "rom.csv", |b| model.write_csv(b))?;
    global.say(format!("{name}: nr = {}, np = {}", model.nr(), model.np()));
    global.say(format!("  jx = {:?}", model.jx.as_slice()));
    global.say(format!("  ju = {:?}", model.ju.as_slice()));
    Ok(())
}

fn run_id(method: Method, seed: u64) -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{method}-s{seed}-{secs}")
}

pub fn train(global: &Global, args: &TrainArgs) -> anyhow::Result<()> {
    let mut config = global.load_config()?;
    if let Some(m) = &args.method {
        config.set("train.method", m)?;
    }
    if let Some(n) = args.max_steps {
        config.set("train.max_steps", &n.to_string())?;
    }
    let (name, env) = args.env.resolve(&config)?;
    let train = config.train_config()?;
    let protocol = config.disturbance_protocol()?;
    let eval_tf = config.eval_tf()?;

    let pretrained = match &args.pretrained {
        None => None,
        Some(path) => {
            if train.method != Method::MfUmpo {
                return Err(Usage("--pretrained is only accepted with mf-umpo".into()).into());
            }
            let agent = Agent::read_checkpoint(open_input(path)?, DdpgConfig::default())?;
            Some(agent)
        }
    };

    let mut manifest = Manifest {
        run_id: run_id(train.method, train.seed),
        method: train.method.to_string(),
        env: name,
        seed: train.seed,
        out_dir: global.out_dir.clone(),
        status: "running".into(),
        config: resolved_entries(&train, &protocol, eval_tf),
    };
    manifest.write()?;
    let finish = |manifest: &mut Manifest, status: &str| -> anyhow::Result<()> {
        manifest.status = status.to_string();
        manifest.write()
    };

    let outcome = match train_from(&env, &train, pretrained) {
        Ok(o) => o,
        Err(e) => {
            finish(&mut manifest, "failed")?;
            return Err(e.into());
        }
    };
    let trace = write_run(&global.out_dir, &env, &outcome, &train, &protocol, eval_tf)?;
    global.say(format!(
        "{}: {} steps, {} full-system queries, {} episodes",
        train.method,
        outcome.steps,
        outcome.env_queries,
        outcome.log.len()
    ));
    global.say(format!(
        "  final evaluation: length {}, terminated early {}, distance {:e} -> {:e}",
        trace.episode_length, trace.terminated_early, trace.initial_distance, trace.final_distance
    ));
    match &outcome.status {
        RunStatus::Completed => finish(&mut manifest, "completed"),
        RunStatus::Diverged(msg) => {
            finish(&mut manifest, "diverged")?;
            Err(Diverged(msg.clone()).into())
        }
    }
}

pub fn evaluate(global: &Global, args: &EvaluateArgs) -> anyhow::Result<()> {
    let config = global.load_config()?;
    let (_, env) = args.env.resolve(&config)?;
    let train = config.train_config()?;
    let protocol = config.disturbance_protocol()?;
    let agent = Agent::read_checkpoint(open_input(&args.checkpoint)?, DdpgConfig::default())?;
    let coder = match &args.basis {
        Some(path) => {
            let w = read_basis_csv(open_input(path)?)?;
            if w.rows() != env.nh() {
                return Err(Usage(format!(
                    "basis has {} rows but the environment has {} states",
                    w.rows(),
                    env.nh()
                ))
                .into());
            }
            LinearCoder::new(w, env.xbar().to_vec(), env.ubar().to_vec())?
        }
        None => LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec())?,
    };
    if agent.obs_dim() != coder.latent_dim() || agent.action_dim() != env.np() {
        return Err(Usage(format!(
            "checkpoint maps {} observations to {} controls; expected {} to {}",
            agent.obs_dim(),
            agent.action_dim(),
            coder.latent_dim(),
            env.np()
        ))
        .into());
    }
    let threshold = train
        .blowup_threshold
        .unwrap_or_else(|| default_blowup_threshold(env.xbar()));
    let trace = evaluate_with_disturbance(
        &env,
        &coder,
        &agent.actor,
        train.resolved_action_scale(env.ubar()),
        &protocol,
        config.eval_tf()?,
        threshold,
    )?;
    ensure_dir(&global.out_dir)?;
    write_with(&global.out_dir, "eval.csv", |b| write_eval_csv(&trace, b))?;
    write_with(&global.out_dir, "eval_summary.csv", |b| {
        write_eval_summary(&trace, b)
    })?;
    global.say(format!(
        "length {}, terminated early {}, initial distance {:e}, final distance {:e}",
        trace.episode_length, trace.terminated_early, trace.initial_distance, trace.final_distance
    ));
    Ok(())
}

pub fn diagnose(global: &Global) -> anyhow::Result<()> {
    let config = global.load_config()?;
    let epsilon: f64 = config.parsed("diagnose.epsilon")?.unwrap_or(0.1);
    let epsilons: Vec<f64> = config
        .list("diagnose.epsilons")?
        .unwrap_or_else(|| vec![0.01, 0.1, 1.0, 10.0]);
    let budget: usize = config.parsed("diagnose.budget")?.unwrap_or(20_000);
    let protocol = SnapshotProtocol {
        excitation: config.parsed("diagnose.excitation")?.unwrap_or(1e-3),
        threshold: None,
        seed: config.parsed("diagnose.snapshot_seed")?.unwrap_or(0),
    };
    let lo: f64 = config.parsed("diagnose.psi_min")?.unwrap_or(-10.0);
    let hi: f64 = config.parsed("diagnose.psi_max")?.unwrap_or(10.0);
    let points: usize = config.parsed("diagnose.psi_points")?.unwrap_or(400);
    let steps: usize = config.parsed("diagnose.trajectory_steps")?.unwrap_or(100);
    if points < 2 || lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Usage("diagnose needs psi_points >= 2 and psi_min < psi_max".into()).into());
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();

    let env = make_toy2d(epsilon)?;
    let offset = vec![1e-3; env.nh()];
    let pca = converged_pca_coder(&env, &protocol, budget)?;
    let pca_sweep = pca_policy_sweep(&env, &pca, &grid, &offset, steps)?;
    let left = dense_unstable_basis(&env, env.xbar(), env.ubar(), DEFAULT_MARGIN)?;
    let manifold = left.coder(env.xbar(), env.ubar())?;
    let manifold_sweep = pca_policy_sweep(&env, &manifold, &grid, &offset, steps)?;
    let angles = angle_vs_epsilon(&epsilons, &protocol, budget)?;

    ensure_dir(&global.out_dir)?;
    write_with(&global.out_dir, "pca_sweep.csv", |b| {
        write_sweep_csv(&pca_sweep, b)
    })?;
    write_with(&global.out_dir, "manifold_sweep.csv", |b| {
        write_sweep_csv(&manifold_sweep, b)
    })?;
    write_with(&global.out_dir, "angles.csv", |b| {
        write_angle_csv(&angles, b)
    })?;

    let span = |v: &[f64]| match (v.first(), v.last()) {
        (Some(a), Some(b)) => format!("{} gains in [{a:.3}, {b:.3}]", v.len()),
        _ => "none".to_string(),
    };
    global.say(format!(
        "stabilizing gains, PCA coder: {}",
        span(&pca_sweep.stabilizing())
    ));
    global.say(format!(
        "stabilizing gains, unstable-manifold coder: {}",
        span(&manifold_sweep.stabilizing())
    ));
    for p in &angles {
        let count = p
            .samples_to_detect
            .map_or("not detected".to_string(), |k| k.to_string());
        global.say(format!(
            "epsilon {}: angle {:.4} rad, samples to detect {count}",
            p.epsilon, p.angle
        ));
    }
    Ok(())
}
