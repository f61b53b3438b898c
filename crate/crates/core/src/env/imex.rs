use crate::error::{check_len, Result};
use crate::linalg::{DenseMatrix, Factorization};

use super::Dynamics;

/// The explicit part `g(x, u)` of an IMEX Euler step and its derivatives.
pub trait ExplicitTerms: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// `∂g/∂x · v`
    fn jvp_state(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>>;
    /// `(∂g/∂x)ᵀ · z`
    fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>>;
    /// `∂g/∂u · w`
    fn jvp_control(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>>;
    /// `(∂g/∂u)ᵀ · z`
    fn vjp_control(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>>;
}

enum ImplicitSolver {
    Factored(Factorization),
    /// `[[I, −τI], [0, diag(d)]]` for position/velocity states.
    PhaseState {
        tau: f64,
        diag: Vec<f64>,
    },
}

impl ImplicitSolver {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Factored(f) => f.solve(rhs),
            Self::PhaseState { tau, diag } => {
                let l = diag.len();
                let mut out = vec![0.0; 2 * l];
                for i in 0..l {
                    let v = rhs[l + i] / diag[i];
                    out[l + i] = v;
                    out[i] = rhs[i] + tau * v;
                }
                Ok(out)
            }
        }
    }

    fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Factored(f) => f.solve_transpose(rhs),
            Self::PhaseState { tau, diag } => {
                let l = diag.len();
                let mut out = vec![0.0; 2 * l];
                for i in 0..l {
                    out[i] = rhs[i];
                    out[l + i] = (rhs[l + i] + tau * rhs[i]) / diag[i];
                }
                Ok(out)
            }
        }
    }
}

/// IMEX Euler map `x⁺ = (I − τL)⁻¹ (x + τ·g(x, u))`.
///
/// The implicit matrix is factored once at construction. Tangent and adjoint
/// maps follow from the chain rule:
/// `Jₓv = M⁻¹(v + τ·gₓv)` and `Jₓᵀz = y + τ·gₓᵀy` with `y = M⁻ᵀz`.
pub struct ImexDynamics<T> {
    tau: f64,
    solver: ImplicitSolver,
    terms: T,
}

impl<T: ExplicitTerms> ImexDynamics<T> {
    /// General linear part `L` (square, `nh × nh`).
    pub fn new(linear: &DenseMatrix, tau: f64, terms: T) -> Result<Self> {
        check_len("linear operator", terms.state_dim(), linear.rows())?;
        let implicit = DenseMatrix::identity(linear.rows()).sub(&linear.scale(tau))?;
        Ok(Self {
            tau,
            solver: ImplicitSolver::Factored(Factorization::new(&implicit)?),
            terms,
        })
    }

    /// Second-order systems in phase form `(q, v)` with linear part
    /// `q̇ = v`, `v̇ = −damping ∘ v`; `g` only acts on the velocity block.
    pub fn phase_state(damping: &[f64], tau: f64, terms: T) -> Result<Self> {
        check_len("phase state", terms.state_dim(), 2 * damping.len())?;
        Ok(Self {
            tau,
            solver: ImplicitSolver::PhaseState {
                tau,
                diag: damping.iter().map(|d| 1.0 + tau * d).collect(),
            },
            terms,
        })
    }

    pub fn terms(&self) -> &T {
        &self.terms
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl<T: ExplicitTerms> Dynamics for ImexDynamics<T> {
    fn state_dim(&self) -> usize {
        self.terms.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.terms.control_dim()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let g = self.terms.eval(x, u)?;
        let rhs: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + self.tau * b).collect();
        self.solver.solve(&rhs)
    }

    fn jvp_state(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let gv = self.terms.jvp_state(x, u, v)?;
        let rhs: Vec<f64> = v.iter().zip(&gv).map(|(a, b)| a + self.tau * b).collect();
        self.solver.solve(&rhs)
    }

    fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let y = self.solver.solve_transpose(z)?;
        let gy = self.terms.vjp_state(x, u, &y)?;
        Ok(y.iter().zip(&gy).map(|(a, b)| a + self.tau * b).collect())
    }

    fn jvp_control(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let gw = self.terms.jvp_control(x, u, w)?;
        let rhs: Vec<f64> = gw.iter().map(|b| self.tau * b).collect();
        self.solver.solve(&rhs)
    }

    fn vjp_control(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let y = self.solver.solve_transpose(z)?;
        let gy = self.terms.vjp_control(x, u, &y)?;
        Ok(gy.iter().map(|b| self.tau * b).collect())
    }
}
