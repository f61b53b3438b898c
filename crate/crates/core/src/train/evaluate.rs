use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::agent::Mlp;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg::{norm2, sub};
use crate::manifold::LinearCoder;

use super::episode::{lifted_policy_action, Advance, Plant};

pub const EVAL_SUMMARY_HEADER: &str =
    "episode_length,terminated_early,initial_distance,final_distance";

/// Start at `x̄`, apply `u = ū + amplitude·gaussian` at every step `t` with
/// physical time `τ·t ≤ duration`, then hand over to the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceProtocol {
    pub duration: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for DisturbanceProtocol {
    fn default() -> Self {
        Self {
            duration: 0.3,
            amplitude: 0.1,
            seed: 0,
        }
    }
}

impl DisturbanceProtocol {
    /// Number of disturbed steps for a sampling time `tau`; zero for a
    /// negative duration.
    pub fn steps(&self, tau: f64) -> usize {
        if self.duration < 0.0 {
            return 0;
        }
        ((self.duration / tau) + 1e-9).floor() as usize + 1
    }
}

/// Closed-loop trajectory under the disturbance protocol. Row `t` holds
/// `y(t) = C x(t)` and the control applied at `t`; the last row repeats the
/// last control.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub outputs: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub disturbance_steps: usize,
    /// Policy steps completed.
    pub episode_length: usize,
    pub terminated_early: bool,
    /// `‖x − x̄‖₂` when the policy takes over.
    pub initial_distance: f64,
    /// `‖x − x̄‖₂` at the end (at the last admissible state if terminated).
    pub final_distance: f64,
    pub final_state: Vec<f64>,
}

/// Runs the disturbance protocol followed by `tf` steps of the lifted policy.
pub fn evaluate_with_disturbance(
    env: &Environment,
    coder: &LinearCoder,
    actor: &Mlp,
    action_scale: f64,
    protocol: &DisturbanceProtocol,
    tf: usize,
    blowup_threshold: f64,
) -> Result<EvalTrace> {
    let plant = Plant::new(env, coder)?;
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let distance = |x: &[f64]| norm2(&sub(x, env.xbar()));
    let disturbance_steps = protocol.steps(env.spec().tau);
    let mut x = env.xbar().to_vec();
    let mut outputs = Vec::new();
    let mut controls: Vec<Vec<f64>> = Vec::new();
    let mut initial_distance = None;
    let mut terminated = false;

    for t in 0..disturbance_steps + tf {
        let u: Vec<f64> = if t < disturbance_steps {
            env.ubar()
                .iter()
                .map(|u| {
                    let n: f64 = rng.sample(StandardNormal);
                    u + protocol.amplitude * n
                })
                .collect()
        } else {
            initial_distance.get_or_insert_with(|| distance(&x));
            lifted_policy_action(coder, actor, &x, action_scale)?
        };
        outputs.push(env.observe(&x)?);
        controls.push(u.clone());
        match plant.advance(&x, &u, blowup_threshold)? {
            Advance::Next(next) => x = next,
            Advance::Blown(_) => {
                terminated = true;
                break;
            }
        }
    }
    let last_u = controls
        .last()
        .cloned()
        .unwrap_or_else(|| env.ubar().to_vec());
    outputs.push(env.observe(&x)?);
    controls.push(last_u);

    let steps_done = outputs.len() - 1 - usize::from(terminated);
    Ok(EvalTrace {
        initial_distance: initial_distance.unwrap_or_else(|| distance(&x)),
        final_distance: distance(&x),
        outputs,
        controls,
        disturbance_steps,
        episode_length: steps_done.saturating_sub(disturbance_steps),
        terminated_early: terminated,
        final_state: x,
    })
}

pub fn write_eval_csv<W: Write>(trace: &EvalTrace, out: &mut W) -> Result<()> {
    let ny = trace.outputs.first().map_or(0, Vec::len);
    let nu = trace.controls.first().map_or(0, Vec::len);
    let mut header = vec!["time_index".to_string()];
    header.extend((0..ny).map(|i| format!("output_{i}")));
    header.extend((0..nu).map(|i| format!("control_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (t, (y, u)) in trace.outputs.iter().zip(&trace.controls).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(y.iter().chain(u).map(|v| v.to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_eval_summary<W: Write>(trace: &EvalTrace, out: &mut W) -> Result<()> {
    writeln!(out, "{EVAL_SUMMARY_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{}",
        trace.episode_length, trace.terminated_early, trace.initial_distance, trace.final_distance
    )?;
    Ok(())
}

/// Per-row outputs and controls of an evaluation CSV.
pub type EvalColumns = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Parses an evaluation CSV into `(outputs, controls)` per row.
pub fn read_eval_csv<R: BufRead>(input: R) -> Result<EvalColumns> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"time_index") {
        return Err(Error::Parse(
            "evaluation csv must start with time_index".into(),
        ));
    }
    let ny = cols.iter().filter(|c| c.starts_with("output_")).count();
    let nu = cols.iter().filter(|c| c.starts_with("control_")).count();
    let expected: Vec<String> = std::iter::once("time_index".to_string())
        .chain((0..ny).map(|i| format!("output_{i}")))
        .chain((0..nu).map(|i| format!("control_{i}")))
        .collect();
    if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!(
            "unexpected evaluation header `{header}`"
        )));
    }
    let (mut ys, mut us) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("evaluation row {}: {e}", k + 2)))?;
        if values.len() != 1 + ny + nu || values[0] != k as f64 {
            return Err(Error::Parse(format!("evaluation row {} malformed", k + 2)));
        }
        ys.push(values[1..1 + ny].to_vec());
        us.push(values[1 + ny..].to_vec());
    }
    Ok((ys, us))
}
