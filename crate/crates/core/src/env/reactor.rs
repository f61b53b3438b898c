use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

use super::{
    guarded_exp, newton_steady_state, Environment, EnvironmentSpec, ExplicitTerms, ImexDynamics,
};

/// Non-adiabatic tubular reactor: coupled concentration/temperature fields
/// with diffusion, advection and an Arrhenius reaction term. Robin inflow
/// boundary at `ζ = 0` carrying the controls, Neumann outflow at `ζ = 1`;
/// the second control also sets the reference temperature of the jacket.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactorParams {
    /// Total state size: two fields of `grid_size / 2` nodes each.
    pub grid_size: usize,
    pub peclet: f64,
    pub damkohler: f64,
    pub gamma: f64,
    pub beta: f64,
    pub nu_ref: f64,
    pub heat_release: f64,
    pub tau: f64,
    pub ubar: [f64; 2],
}

impl Default for ReactorParams {
    fn default() -> Self {
        Self {
            grid_size: 998,
            peclet: 5.0,
            damkohler: 0.167,
            gamma: 25.0,
            beta: 2.5,
            nu_ref: 1.0,
            heat_release: 0.5,
            tau: 0.01,
            ubar: [1.0, 1.0],
        }
    }
}

impl ReactorParams {
    pub fn build(&self) -> Result<Environment> {
        let n = self.grid_size;
        if n < 6 || !n.is_multiple_of(2) {
            return Err(Error::invalid(
                "tubular_reactor grid_size must be even and at least 6",
            ));
        }
        if !(self.peclet > 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid(
                "tubular_reactor peclet and tau must be positive",
            ));
        }
        let m = n / 2;
        let h = 1.0 / (m as f64 - 1.0);
        let pe = self.peclet;
        let (field, inlet) = transport_operator(m, h, pe);

        let mut linear = DenseMatrix::zeros(n, n);
        for i in 0..m {
            for j in i.saturating_sub(1)..(i + 2).min(m) {
                linear[(i, j)] = field[(i, j)];
                linear[(m + i, m + j)] = field[(i, j)];
            }
            linear[(m + i, m + i)] -= self.beta;
        }
        let terms = Arrhenius {
            m,
            damkohler: self.damkohler,
            gamma: self.gamma,
            heat_release: self.heat_release,
            jacket: self.beta * self.nu_ref,
            inlet,
        };
        let dynamics = ImexDynamics::new(&linear, self.tau, terms)?;
        let ubar = self.ubar.to_vec();
        let xbar = newton_steady_state(&dynamics, &ubar, &vec![1.0; n])?;

        let mut output = DenseMatrix::zeros(2, n);
        output[(0, 0)] = 1.0;
        output[(1, m)] = 1.0;
        let spec = EnvironmentSpec {
            name: "tubular_reactor".into(),
            nh: n,
            np: 2,
            tau: self.tau,
            xbar,
            ubar,
            output,
            nr_expected: 2,
        };
        Environment::new(spec, Arc::new(dynamics))
    }
}

/// Tubular reactor with default parameters and `n` total states.
pub fn make_tubular_reactor(n: usize) -> Result<Environment> {
    ReactorParams {
        grid_size: n,
        ..Default::default()
    }
    .build()
}

/// `(1/Pe)·∂ζζ − ∂ζ` on `m` nodes `ζᵢ = i·h` (central diffusion, upwind
/// advection). Ghost nodes eliminate the boundaries: `x₋₁ = x₁ − 2h·Pe·(x₀ − u)`
/// and `x_m = x_{m−2}`. Returns the operator and the coefficient vector of
/// the inflow value `u`.
fn transport_operator(m: usize, h: f64, pe: f64) -> (DenseMatrix, Vec<f64>) {
    let mut a = DenseMatrix::zeros(m, m);
    let mut inlet = vec![0.0; m];
    let diffusion = 1.0 / (pe * h * h);
    for i in 0..m {
        let neighbors = [
            (i as isize - 1, diffusion + 1.0 / h),
            (i as isize, -2.0 * diffusion - 1.0 / h),
            (i as isize + 1, diffusion),
        ];
        for (j, c) in neighbors {
            if j < 0 {
                a[(i, 1)] += c;
                a[(i, 0)] -= 2.0 * h * pe * c;
                inlet[i] += 2.0 * h * pe * c;
            } else if j as usize == m {
                a[(i, m - 2)] += c;
            } else {
                a[(i, j as usize)] += c;
            }
        }
    }
    (a, inlet)
}

struct Arrhenius {
    m: usize,
    damkohler: f64,
    gamma: f64,
    heat_release: f64,
    jacket: f64,
    inlet: Vec<f64>,
}

impl Arrhenius {
    /// Per-node `(D·E, D·c·∂E/∂T)` with `E = exp(γ − γ/T)`.
    fn rate_derivatives(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        let m = self.m;
        (0..m)
            .map(|i| {
                let (c, t) = (x[i], x[m + i]);
                if !(t > 0.0) {
                    return Err(Error::StateBlowup { index: m + i });
                }
                let (e, clamped) = guarded_exp(self.gamma - self.gamma / t, m + i)?;
                let de = if clamped {
                    0.0
                } else {
                    e * self.gamma / (t * t)
                };
                Ok((self.damkohler * e, self.damkohler * c * de))
            })
            .collect()
    }
}

impl ExplicitTerms for Arrhenius {
    fn state_dim(&self) -> usize {
        2 * self.m
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("control", 2, u.len())?;
        let m = self.m;
        let mut out = vec![0.0; 2 * m];
        for (i, (de, _)) in self.rate_derivatives(x)?.into_iter().enumerate() {
            let rate = de * x[i];
            out[i] = -rate + self.inlet[i] * u[0];
            out[m + i] = self.heat_release * rate + self.inlet[i] * u[1] + self.jacket * u[1];
        }
        Ok(out)
    }

    fn jvp_state(&self, x: &[f64], _u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let mut out = vec![0.0; 2 * m];
        for (i, (dc, dt)) in self.rate_derivatives(x)?.into_iter().enumerate() {
            let dr = dc * v[i] + dt * v[m + i];
            out[i] = -dr;
            out[m + i] = self.heat_release * dr;
        }
        Ok(out)
    }

    fn vjp_state(&self, x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let mut out = vec![0.0; 2 * m];
        for (i, (dc, dt)) in self.rate_derivatives(x)?.into_iter().enumerate() {
            let s = -z[i] + self.heat_release * z[m + i];
            out[i] = s * dc;
            out[m + i] = s * dt;
        }
        Ok(out)
    }

    fn jvp_control(&self, _x: &[f64], _u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let mut out = vec![0.0; 2 * m];
        for i in 0..m {
            out[i] = self.inlet[i] * w[0];
            out[m + i] = (self.inlet[i] + self.jacket) * w[1];
        }
        Ok(out)
    }

    fn vjp_control(&self, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let mut out = [0.0; 2];
        for i in 0..m {
            out[0] += self.inlet[i] * z[i];
            out[1] += (self.inlet[i] + self.jacket) * z[m + i];
        }
        Ok(out.to_vec())
    }
}
