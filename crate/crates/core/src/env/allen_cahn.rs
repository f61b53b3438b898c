use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

use super::{newton_steady_state, Environment, EnvironmentSpec, ExplicitTerms, ImexDynamics};

/// Reaction-diffusion on `(0, 1)` with homogeneous Dirichlet boundaries and
/// a spatially uniform control:
/// `ν_t = κ ν_ζζ + α₁ ν³ − α₂ ν − u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllenCahnParams {
    /// Number of interior grid nodes.
    pub grid_size: usize,
    pub kappa: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau: f64,
    pub ubar: f64,
}

impl Default for AllenCahnParams {
    fn default() -> Self {
        Self {
            grid_size: 1000,
            kappa: 0.2,
            alpha1: 2.5,
            alpha2: 0.0,
            tau: 0.01,
            ubar: 1.0,
        }
    }
}

impl AllenCahnParams {
    pub fn build(&self) -> Result<Environment> {
        let n = self.grid_size;
        if n < 3 {
            return Err(Error::invalid("allen_cahn grid_size must be at least 3"));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("ubar", self.ubar),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("allen_cahn {name} must be finite")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("allen_cahn tau must be positive"));
        }
        let h = 1.0 / (n as f64 + 1.0);
        let c = self.kappa / (h * h);
        let laplacian = DenseMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0 * c
            } else if i.abs_diff(j) == 1 {
                c
            } else {
                0.0
            }
        });
        let terms = Reaction {
            n,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        };
        let dynamics = ImexDynamics::new(&laplacian, self.tau, terms)?;
        let ubar = vec![self.ubar];
        let xbar = newton_steady_state(&dynamics, &ubar, &vec![0.0; n])?;

        let mut output = DenseMatrix::zeros(2, n);
        for i in 0..n {
            let position = (i + 1) as f64 * h;
            output[(if position < 1.0 / 3.0 { 0 } else { 1 }, i)] = 1.0;
        }
        let spec = EnvironmentSpec {
            name: "allen_cahn".into(),
            nh: n,
            np: 1,
            tau: self.tau,
            xbar,
            ubar,
            output,
            nr_expected: 1,
        };
        Environment::new(spec, Arc::new(dynamics))
    }
}

/// Allen-Cahn environment with default parameters and `n` interior nodes.
pub fn make_allen_cahn(n: usize) -> Result<Environment> {
    AllenCahnParams {
        grid_size: n,
        ..Default::default()
    }
    .build()
}

struct Reaction {
    n: usize,
    alpha1: f64,
    alpha2: f64,
}

impl Reaction {
    fn slope(&self, x: f64) -> f64 {
        3.0 * self.alpha1 * x * x - self.alpha2
    }
}

impl ExplicitTerms for Reaction {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("control", 1, u.len())?;
        Ok(x.iter()
            .map(|&v| self.alpha1 * v * v * v - self.alpha2 * v - u[0])
            .collect())
    }

    fn jvp_state(&self, x: &[f64], _u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter()
            .zip(v)
            .map(|(&xi, vi)| self.slope(xi) * vi)
            .collect())
    }

    fn vjp_state(&self, x: &[f64], u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.jvp_state(x, u, z)
    }

    fn jvp_control(&self, _x: &[f64], _u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-w[0]; self.n])
    }

    fn vjp_control(&self, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-z.iter().sum::<f64>()])
    }
}
