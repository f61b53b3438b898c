//! Queryable discrete-time systems `x⁺ = f(x, u)`.
//!
//! An [`Environment`] pairs the static description of a system
//! ([`EnvironmentSpec`]: dimensions, steady state, output map) with its
//! behavior ([`Dynamics`]: the step map plus tangent and adjoint maps). The
//! built-in PDE and lattice models are IMEX Euler discretizations whose
//! Jacobian maps are derived by hand; user-defined dynamics that only provide
//! `step` fall back to central finite differences.

mod allen_cahn;
mod imex;
mod linear;
mod reactor;
mod toda;

use std::fmt;
use std::sync::Arc;

pub use allen_cahn::{make_allen_cahn, AllenCahnParams};
pub use imex::{ExplicitTerms, ImexDynamics};
pub use linear::{make_toy2d, LinearDynamics};
pub use reactor::{make_tubular_reactor, ReactorParams};
pub use toda::{make_toda_lattice, TodaParams};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm_inf, solve_linear, DenseMatrix};

/// Static description of a system around its steady state.
#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    pub name: String,
    pub nh: usize,
    pub np: usize,
    /// Sampling time in model time units.
    pub tau: f64,
    pub xbar: Vec<f64>,
    pub ubar: Vec<f64>,
    /// Output map `y = C x`.
    pub output: DenseMatrix,
    /// Number of unstable modes the system is known to have (metadata only).
    pub nr_expected: usize,
}

/// Step map with tangent (`J·v`) and adjoint (`Jᵀ·z`) products.
///
/// Only `step` is mandatory. The defaults approximate the Jacobian products
/// by central differences with step `√ε·(1 + ‖x‖∞)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    fn jvp_state(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let scale = norm_inf(v);
        if scale == 0.0 {
            return Ok(vec![0.0; self.state_dim()]);
        }
        let h = fd_step(x);
        let shifted = |sign: f64| -> Vec<f64> {
            x.iter()
                .zip(v)
                .map(|(xi, vi)| xi + sign * h * vi / scale)
                .collect()
        };
        let plus = self.step(&shifted(1.0), u)?;
        let minus = self.step(&shifted(-1.0), u)?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| (p - m) * scale / (2.0 * h))
            .collect())
    }

    fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        fd_vjp(self, x, u, z, fd_step(x))
    }

    fn jvp_control(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let scale = norm_inf(w);
        if scale == 0.0 {
            return Ok(vec![0.0; self.state_dim()]);
        }
        let h = fd_step(u);
        let shifted = |sign: f64| -> Vec<f64> {
            u.iter()
                .zip(w)
                .map(|(ui, wi)| ui + sign * h * wi / scale)
                .collect()
        };
        let plus = self.step(x, &shifted(1.0))?;
        let minus = self.step(x, &shifted(-1.0))?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| (p - m) * scale / (2.0 * h))
            .collect())
    }

    fn vjp_control(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let h = fd_step(u);
        let mut out = vec![0.0; self.control_dim()];
        let mut probe = u.to_vec();
        for (j, o) in out.iter_mut().enumerate() {
            probe[j] = u[j] + h;
            let plus = dot(z, &self.step(x, &probe)?);
            probe[j] = u[j] - h;
            let minus = dot(z, &self.step(x, &probe)?);
            probe[j] = u[j];
            *o = (plus - minus) / (2.0 * h);
        }
        Ok(out)
    }
}

fn fd_step(x: &[f64]) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + norm_inf(x))
}

fn fd_vjp<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &[f64],
    u: &[f64],
    z: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    if z.iter().all(|v| *v == 0.0) {
        return Ok(out);
    }
    let mut probe = x.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        probe[i] = x[i] + h;
        let plus = dot(z, &dynamics.step(&probe, u)?);
        probe[i] = x[i] - h;
        let minus = dot(z, &dynamics.step(&probe, u)?);
        probe[i] = x[i];
        *o = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// A system ready for querying. Cheap to clone; immutable.
#[derive(Clone)]
pub struct Environment {
    spec: Arc<EnvironmentSpec>,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("name", &self.spec.name)
            .field("nh", &self.spec.nh)
            .field("np", &self.spec.np)
            .finish()
    }
}

impl Environment {
    /// Validates dimensions and the equilibrium condition
    /// `‖f(x̄, ū) − x̄‖∞ ≤ 1e-9·(1 + ‖x̄‖∞)`.
    pub fn new(spec: EnvironmentSpec, dynamics: Arc<dyn Dynamics>) -> Result<Self> {
        if spec.nh == 0 || spec.np == 0 {
            return Err(Error::invalid("environment needs nh ≥ 1 and np ≥ 1"));
        }
        check_len("dynamics state dim", spec.nh, dynamics.state_dim())?;
        check_len("dynamics control dim", spec.np, dynamics.control_dim())?;
        check_len("steady state", spec.nh, spec.xbar.len())?;
        check_len("steady control", spec.np, spec.ubar.len())?;
        check_len("output matrix columns", spec.nh, spec.output.cols())?;
        if !spec.tau.is_finite() || spec.tau <= 0.0 {
            return Err(Error::invalid("sampling time must be positive"));
        }
        let env = Self {
            spec: Arc::new(spec),
            dynamics,
        };
        let residual = env.equilibrium_residual()?;
        let bound = 1e-9 * (1.0 + norm_inf(&env.spec.xbar));
        if residual > bound {
            return Err(Error::invalid(format!(
                "({}) steady state violates equilibrium: residual {residual:e} > {bound:e}",
                env.spec.name
            )));
        }
        Ok(env)
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn nh(&self) -> usize {
        self.spec.nh
    }

    pub fn np(&self) -> usize {
        self.spec.np
    }

    pub fn xbar(&self) -> &[f64] {
        &self.spec.xbar
    }

    pub fn ubar(&self) -> &[f64] {
        &self.spec.ubar
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    /// `‖f(x̄, ū) − x̄‖∞`
    pub fn equilibrium_residual(&self) -> Result<f64> {
        let next = self.step(&self.spec.xbar, &self.spec.ubar)?;
        Ok(next
            .iter()
            .zip(&self.spec.xbar)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    fn check_inputs(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_len("state", self.spec.nh, x.len())?;
        check_len("control", self.spec.np, u.len())?;
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "step input" });
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        let next = self.dynamics.step(x, u)?;
        if let Some(index) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::StateBlowup { index });
        }
        Ok(next)
    }

    pub fn jvp_state(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        check_len("tangent", self.spec.nh, v.len())?;
        finite(self.dynamics.jvp_state(x, u, v)?, "jvp_state")
    }

    pub fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        check_len("cotangent", self.spec.nh, z.len())?;
        finite(self.dynamics.vjp_state(x, u, z)?, "vjp_state")
    }

    pub fn jvp_control(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        check_len("control tangent", self.spec.np, w.len())?;
        finite(self.dynamics.jvp_control(x, u, w)?, "jvp_control")
    }

    pub fn vjp_control(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, u)?;
        check_len("cotangent", self.spec.nh, z.len())?;
        finite(self.dynamics.vjp_control(x, u, z)?, "vjp_control")
    }

    /// Outputs `y = C x`.
    pub fn observe(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spec.output.matvec(x)
    }

    /// Dense `∇ₓf(x, u)` assembled column by column from `jvp_state`.
    pub fn state_jacobian(&self, x: &[f64], u: &[f64]) -> Result<DenseMatrix> {
        let n = self.spec.nh;
        let mut jac = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.jvp_state(x, u, &e)?;
            jac.set_column(j, &col)?;
            e[j] = 0.0;
        }
        Ok(jac)
    }

    /// Dense `∇ᵤf(x, u)` assembled from `jvp_control`.
    pub fn control_jacobian(&self, x: &[f64], u: &[f64]) -> Result<DenseMatrix> {
        let (n, p) = (self.spec.nh, self.spec.np);
        let mut jac = DenseMatrix::zeros(n, p);
        let mut e = vec![0.0; p];
        for j in 0..p {
            e[j] = 1.0;
            let col = self.jvp_control(x, u, &e)?;
            jac.set_column(j, &col)?;
            e[j] = 0.0;
        }
        Ok(jac)
    }

    /// Same environment with a different steady state and metadata.
    pub fn with_spec(&self, spec: EnvironmentSpec) -> Result<Self> {
        Self::new(spec, Arc::clone(&self.dynamics))
    }
}

fn finite(v: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite { what })
    }
}

/// Central-difference approximation of `Jₓᵀz` through the scalar
/// `g(x) = ⟨z, f(x, u)⟩`, one coordinate at a time (`2·nh` step calls).
pub fn finite_difference_vjp_oracle<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &[f64],
    u: &[f64],
    z: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    check_len("state", dynamics.state_dim(), x.len())?;
    check_len("cotangent", dynamics.state_dim(), z.len())?;
    let mut out = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        probe[i] = x[i] + h;
        let plus = dot(z, &dynamics.step(&probe, u)?);
        probe[i] = x[i] - h;
        let minus = dot(z, &dynamics.step(&probe, u)?);
        probe[i] = x[i];
        *o = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

pub const NEWTON_MAX_ITERATIONS: usize = 50;

/// Steady state for a fixed control: Newton on `f(x, ū) − x = 0` with the
/// dense Jacobian assembled column-wise from `jvp_state`.
pub fn newton_steady_state<D: Dynamics + ?Sized>(
    dynamics: &D,
    ubar: &[f64],
    x_guess: &[f64],
) -> Result<Vec<f64>> {
    let n = dynamics.state_dim();
    check_len("newton guess", n, x_guess.len())?;
    check_len("newton control", dynamics.control_dim(), ubar.len())?;
    if x_guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "newton guess",
        });
    }
    let mut x = x_guess.to_vec();
    let mut residual_norm = f64::INFINITY;
    for _ in 0..=NEWTON_MAX_ITERATIONS {
        let fx = dynamics.step(&x, ubar)?;
        let residual: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        residual_norm = norm_inf(&residual);
        if !residual_norm.is_finite() {
            break;
        }
        if residual_norm <= 1e-12 * (1.0 + norm_inf(&x)) {
            return Ok(x);
        }
        let mut jac = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let mut col = dynamics.jvp_state(&x, ubar, &e)?;
            col[j] -= 1.0;
            jac.set_column(j, &col)?;
            e[j] = 0.0;
        }
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = solve_linear(&jac, &rhs)?;
        for (xi, d) in x.iter_mut().zip(delta) {
            *xi += d;
        }
    }
    Err(Error::NewtonNoConvergence {
        iterations: NEWTON_MAX_ITERATIONS,
        residual: residual_norm,
    })
}

/// Guards an exponent: clamps to ±50 and reports a blowup past ±500.
#[inline]
pub(crate) fn guarded_exp(arg: f64, index: usize) -> Result<(f64, bool)> {
    const CLAMP: f64 = 50.0;
    const BLOWUP: f64 = 500.0;
    if !arg.is_finite() || arg.abs() > BLOWUP {
        return Err(Error::StateBlowup { index });
    }
    if arg.abs() > CLAMP {
        Ok((arg.signum() * CLAMP).exp()).map(|v| (v, true))
    } else {
        Ok((arg.exp(), false))
    }
}
