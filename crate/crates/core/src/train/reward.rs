use crate::error::{Error, Result};

/// Quadratic-root reward with `Q = I` on the observation and `R = λ_u·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub lambda_u: f64,
    /// Episode length `tf`.
    pub tf: usize,
    /// Early termination once `‖x − x̄‖∞` exceeds this.
    pub blowup_threshold: f64,
}

impl RewardSpec {
    pub fn new(lambda_u: f64, tf: usize, blowup_threshold: f64) -> Result<Self> {
        if !(lambda_u >= 0.0) || tf == 0 || !(blowup_threshold > 0.0) {
            return Err(Error::invalid(
                "reward needs lambda_u >= 0, tf > 0 and a positive blowup threshold",
            ));
        }
        Ok(Self {
            lambda_u,
            tf,
            blowup_threshold,
        })
    }
}

fn control_cost(u: &[f64], ubar: &[f64]) -> f64 {
    u.iter().zip(ubar).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `−√(‖dev‖² + λ_u·‖u − ū‖²)`
pub fn reward(spec: &RewardSpec, obs_deviation: &[f64], u: &[f64], ubar: &[f64]) -> f64 {
    let state: f64 = obs_deviation.iter().map(|v| v * v).sum();
    -(state + spec.lambda_u * control_cost(u, ubar)).sqrt()
}

/// Reward for an episode cut at `ta < tf`:
/// `−√((tf − ta)·‖dev‖² + λ_u·‖u − ū‖²)`.
pub fn termination_penalty(
    spec: &RewardSpec,
    obs_deviation: &[f64],
    u: &[f64],
    ubar: &[f64],
    ta: usize,
) -> f64 {
    let state: f64 = obs_deviation.iter().map(|v| v * v).sum();
    penalty_from_parts(spec, state, control_cost(u, ubar), ta)
}

pub(crate) fn penalty_from_parts(
    spec: &RewardSpec,
    state_sq: f64,
    control_sq: f64,
    ta: usize,
) -> f64 {
    let remaining = spec.tf.saturating_sub(ta) as f64;
    -(remaining * state_sq + spec.lambda_u * control_sq).sqrt()
}

/// `accumulated / √((nc + λ_u)·tf)`
pub fn normalized_reward(accumulated: f64, nc: usize, lambda_u: f64, tf: usize) -> f64 {
    accumulated / ((nc as f64 + lambda_u) * tf as f64).sqrt()
}

/// `−10^(mean log₁₀|v|)` over strictly negative values.
pub fn logmean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("logmean of an empty list"));
    }
    if let Some(v) = values.iter().find(|v| !(**v < 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "logmean needs strictly negative finite values, got {v}"
        )));
    }
    let mean = values.iter().map(|v| v.abs().log10()).sum::<f64>() / values.len() as f64;
    Ok(-(10f64.powf(mean)))
}
