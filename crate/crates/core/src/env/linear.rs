use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::{dense_eigendecompose, DenseMatrix, EigenvectorRequest};

use super::{Dynamics, Environment, EnvironmentSpec};

/// Exact linear map `x⁺ = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: DenseMatrix,
    b: DenseMatrix,
}

impl LinearDynamics {
    pub fn new(a: DenseMatrix, b: DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NonSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        check_len("control matrix rows", a.rows(), b.rows())?;
        Ok(Self { a, b })
    }

    pub fn state_matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn control_matrix(&self) -> &DenseMatrix {
        &self.b
    }

    /// Environment around the zero steady state with `C = I` and the
    /// unstable-mode count taken from the dense spectrum.
    pub fn into_environment(self, name: &str, tau: f64) -> Result<Environment> {
        let (nh, np) = (self.a.rows(), self.b.cols());
        let spectrum = dense_eigendecompose(&self.a, EigenvectorRequest::None)?;
        let spec = EnvironmentSpec {
            name: name.to_string(),
            nh,
            np,
            tau,
            xbar: vec![0.0; nh],
            ubar: vec![0.0; np],
            output: DenseMatrix::identity(nh),
            nr_expected: spectrum.count_at_least(1.0 - 1e-9),
        };
        Environment::new(spec, Arc::new(self))
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn control_dim(&self) -> usize {
        self.b.cols()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.a.matvec(x)?;
        for (o, bu) in out.iter_mut().zip(self.b.matvec(u)?) {
            *o += bu;
        }
        Ok(out)
    }

    fn jvp_state(&self, _x: &[f64], _u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.a.matvec(v)
    }

    fn vjp_state(&self, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.a.tr_matvec(z)
    }

    fn jvp_control(&self, _x: &[f64], _u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.b.matvec(w)
    }

    fn vjp_control(&self, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.b.tr_matvec(z)
    }
}

/// The two-state example `A = [[0.9, 0], [ε, 1.1]]`, `B = (1, 0)ᵀ`: the
/// control acts only on the stable state, which feeds the unstable one
/// through the coupling `ε`.
pub fn make_toy2d(epsilon: f64) -> Result<Environment> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid("toy2d coupling must be positive"));
    }
    let a = DenseMatrix::from_rows(&[&[0.9, 0.0], &[epsilon, 1.1]]);
    let b = DenseMatrix::from_rows(&[&[1.0], &[0.0]]);
    LinearDynamics::new(a, b)?.into_environment("toy2d", 1.0)
}
