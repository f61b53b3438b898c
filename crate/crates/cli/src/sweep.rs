//! Cartesian grids of training runs with per-method aggregation.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use clap::Args;

use stabl::config::Config;
use stabl::train::{logmean, read_train_log, train, RunStatus};

use crate::commands::{EnvArgs, Usage};
use crate::output::{manifest_status, resolved_entries, write_run, write_with, Manifest};
use crate::Global;

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Grid file: one `key = v1; v2; ...` line per swept key.
    #[arg(long)]
    pub grid: PathBuf,
    /// Skip runs whose manifest already says completed.
    #[arg(long)]
    pub resume: bool,
    /// Concurrent workers (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Swept keys with their candidate values, in file order.
pub fn parse_grid(text: &str) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let mut axes = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Usage(format!("grid line {}: expected `key = v1; v2`", k + 1)))?;
        let values: Vec<String> = values
            .split(';')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Usage(format!("grid line {}: no values", k + 1)).into());
        }
        axes.push((key.trim().to_string(), values));
    }
    Ok(axes)
}

/// Cartesian product; the first key varies slowest.
pub fn expand(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

struct RunResult {
    method: String,
    status: String,
    normalized: Option<f64>,
}

/// Normalized reward of the last evaluation row, else of the last
/// training episode.
fn final_normalized_reward(dir: &Path) -> Option<f64> {
    let read = |name: &str| -> Option<f64> {
        let file = fs::File::open(dir.join(name)).ok()?;
        read_train_log(BufReader::new(file))
            .ok()?
            .last()
            .map(|r| r.normalized_reward)
    };
    read("eval_log.csv").or_else(|| read("train_log.csv"))
}

fn method_of(dir: &Path) -> Option<String> {
    let text = fs::read_to_string(dir.join(crate::output::MANIFEST)).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == "run.method").then(|| v.trim().to_string())
    })
}

fn run_one(
    global: &Global,
    args: &SweepArgs,
    base: &Config,
    point: &[(String, String)],
    dir: &Path,
) -> anyhow::Result<RunResult> {
    let mut config = base.clone();
    for (k, v) in point {
        config.set(k, v)?;
    }
    let (name, env) = args.env.resolve(&config)?;
    let train_config = config.train_config()?;
    let protocol = config.disturbance_protocol()?;
    let eval_tf = config.eval_tf()?;
    let mut manifest = Manifest {
        run_id: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        method: train_config.method.to_string(),
        env: name,
        seed: train_config.seed,
        out_dir: dir.to_path_buf(),
        status: "running".into(),
        config: resolved_entries(&train_config, &protocol, eval_tf),
    };
    manifest.write()?;
    let status = match train(&env, &train_config) {
        Ok(outcome) => {
            write_run(dir, &env, &outcome, &train_config, &protocol, eval_tf)?;
            match outcome.status {
                RunStatus::Completed => "completed",
                RunStatus::Diverged(_) => "diverged",
            }
        }
        Err(e) => {
            global.say(format!("{}: {e}", dir.display()));
            "failed"
        }
    };
    manifest.status = status.to_string();
    manifest.write()?;
    Ok(RunResult {
        method: manifest.method,
        status: status.to_string(),
        normalized: final_normalized_reward(dir),
    })
}

pub fn sweep(global: &Global, args: &SweepArgs) -> anyhow::Result<()> {
    let base = global.load_config()?;
    let text = fs::read_to_string(&args.grid)
        .map_err(|e| Usage(format!("cannot read grid {}: {e}", args.grid.display())))?;
    let axes = parse_grid(&text)?;
    if axes.is_empty() {
        return Err(Usage(format!("grid {} is empty", args.grid.display())).into());
    }
    // Validate every key and value combination before starting.
    let points = expand(&axes);
    for point in &points {
        let mut config = base.clone();
        for (k, v) in point {
            config.set(k, v)?;
        }
        config.train_config()?;
    }
    fs::create_dir_all(&global.out_dir)
        .with_context(|| format!("creating {}", global.out_dir.display()))?;

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunResult>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(points.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = points.get(k) else { break };
                let dir = global.out_dir.join(format!("run_{k:04}"));
                let result = if args.resume && manifest_status(&dir).as_deref() == Some("completed")
                {
                    Ok(RunResult {
                        method: method_of(&dir).unwrap_or_default(),
                        status: "completed".into(),
                        normalized: final_normalized_reward(&dir),
                    })
                } else {
                    run_one(global, args, &base, point, &dir)
                };
                match result {
                    Ok(r) => results.lock().expect("results lock")[k] = Some(r),
                    Err(e) => errors
                        .lock()
                        .expect("errors lock")
                        .push(format!("{}: {e:#}", dir.display())),
                }
            });
        }
    });
    let results = results.into_inner().expect("results lock");
    let errors = errors.into_inner().expect("errors lock");

    let mut listing = String::from("run,status,method,normalized_reward");
    for (k, r) in results.iter().enumerate() {
        let (status, method, rn) = match r {
            Some(r) => (
                r.status.as_str(),
                r.method.as_str(),
                r.normalized.map_or(String::new(), |v| v.to_string()),
            ),
            None => ("error", "", String::new()),
        };
        listing.push_str(&format!("\nrun_{k:04},{status},{method},{rn}"));
    }
    listing.push('\n');
    fs::write(global.out_dir.join("runs.csv"), listing)?;

    let mut methods: Vec<&str> = results
        .iter()
        .flatten()
        .map(|r| r.method.as_str())
        .collect();
    methods.sort_unstable();
    methods.dedup();
    let mut rows = Vec::new();
    for m in methods {
        let of_method: Vec<&RunResult> =
            results.iter().flatten().filter(|r| r.method == m).collect();
        let rns: Vec<f64> = of_method
            .iter()
            .filter(|r| r.status == "completed")
            .filter_map(|r| r.normalized)
            .filter(|v| *v < 0.0 && v.is_finite())
            .collect();
        let completed = of_method.iter().filter(|r| r.status == "completed").count();
        let lm = if rns.is_empty() {
            String::new()
        } else {
            logmean(&rns)?.to_string()
        };
        global.say(format!(
            "{m}: {} runs, {completed} completed, logmean Rn {}",
            of_method.len(),
            if lm.is_empty() { "n/a" } else { &lm }
        ));
        rows.push(format!("{m},{},{completed},{lm}", of_method.len()));
    }
    write_with(&global.out_dir, "summary.csv", |b| {
        use std::io::Write;
        writeln!(b, "method,runs,completed,logmean_normalized_reward")?;
        for r in &rows {
            writeln!(b, "{r}")?;
        }
        Ok(())
    })?;
    for e in &errors {
        eprintln!("warning: {e}");
    }
    Ok(())
}
