//! `stabl` command line driver.

mod commands;
mod output;
mod sweep;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stabl::config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "stabl",
    version,
    about = "Stabilizing policies on unstable manifolds"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Configuration file with `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed; overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "STABL_OUT_DIR", default_value = "out", global = true)]
    out_dir: PathBuf,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the left unstable eigenspace at the steady state.
    Eigenspace(commands::EnvArgs),
    /// Assemble the latent linear model.
    Rom(commands::RomArgs),
    /// Train a policy.
    Train(commands::TrainArgs),
    /// Run the disturbance protocol with a saved policy.
    Evaluate(commands::EvaluateArgs),
    /// PCA versus unstable-manifold diagnostics on the two-state example.
    Diagnose,
    /// Train over a grid of configurations.
    Sweep(sweep::SweepArgs),
}

impl Global {
    /// Config file (if any) plus overrides plus `--seed`.
    pub fn load_config(&self) -> anyhow::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        for assignment in &self.set {
            config.apply_override(assignment)?;
        }
        if let Some(seed) = self.seed {
            config.set("train.seed", &seed.to_string())?;
        }
        Ok(config)
    }

    pub fn say(&self, line: impl AsRef<str>) {
        // A closed pipe (e.g. `| head`) is not worth a panic.
        if !self.quiet {
            let _ = writeln!(std::io::stdout(), "{}", line.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Eigenspace(a) => commands::eigenspace(&cli.global, a),
        Command::Rom(a) => commands::rom(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Diagnose => commands::diagnose(&cli.global),
        Command::Sweep(a) => sweep::sweep(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
