use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;

use super::{guarded_exp, Environment, EnvironmentSpec, ExplicitTerms, ImexDynamics};

/// Damped Toda lattice with three particle clusters that repel each other
/// through negative coupling constants at the cluster ends. State is the
/// phase vector `(q, q̇)`; one control per cluster acts on all its particles.
#[derive(Debug, Clone, PartialEq)]
pub struct TodaParams {
    pub particles: usize,
    pub tau: f64,
}

impl Default for TodaParams {
    fn default() -> Self {
        Self {
            particles: 500,
            tau: 0.1,
        }
    }
}

const MASS_PATTERN: [f64; 5] = [2.0, 1.0, 3.0, 5.0, 4.0];

/// Cluster sizes `(3/10, 5/10, rest)` of the particle count.
pub(crate) fn cluster_sizes(particles: usize) -> [usize; 3] {
    let c1 = (0.3 * particles as f64).round() as usize;
    let c2 = (0.5 * particles as f64).round() as usize;
    [c1, c2, particles - c1 - c2]
}

impl TodaParams {
    pub fn build(&self) -> Result<Environment> {
        let l = self.particles;
        if l < 10 {
            return Err(Error::invalid("toda particles must be at least 10"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("toda tau must be positive"));
        }
        let [c1, c2, c3] = cluster_sizes(l);
        let mut mass = Vec::with_capacity(l);
        let mut damping = Vec::with_capacity(l);
        let mut stiffness = Vec::with_capacity(l);
        let mut cluster = Vec::with_capacity(l);
        for j in 1..=l {
            let (g, k) = if j < c1 {
                (0.1, 2.0)
            } else if j == c1 {
                (0.1, -1.0)
            } else if j < c1 + c2 {
                (0.15, 5.0)
            } else if j == c1 + c2 {
                (0.1, -2.0)
            } else {
                (0.5, 1.0)
            };
            let m = MASS_PATTERN[(j - 1) % 5];
            mass.push(m);
            damping.push(g / m);
            stiffness.push(k);
            cluster.push(if j <= c1 {
                0
            } else if j <= c1 + c2 {
                1
            } else {
                2
            });
        }
        let terms = LatticeForces {
            mass,
            stiffness,
            cluster,
        };
        let dynamics = ImexDynamics::phase_state(&damping, self.tau, terms)?;

        let mut output = DenseMatrix::zeros(3, 2 * l);
        let sizes = [c1, c2, c3];
        for (j, &c) in dynamics.terms().cluster.iter().enumerate() {
            output[(c, l + j)] = 1.0 / sizes[c] as f64;
        }
        let spec = EnvironmentSpec {
            name: "toda".into(),
            nh: 2 * l,
            np: 3,
            tau: self.tau,
            xbar: vec![0.0; 2 * l],
            ubar: vec![0.0; 3],
            output,
            nr_expected: 2,
        };
        Environment::new(spec, Arc::new(dynamics))
    }
}

/// Toda lattice with default parameters and the given particle count.
pub fn make_toda_lattice(particles: usize) -> Result<Environment> {
    TodaParams {
        particles,
        ..Default::default()
    }
    .build()
}

struct LatticeForces {
    mass: Vec<f64>,
    stiffness: Vec<f64>,
    cluster: Vec<usize>,
}

impl LatticeForces {
    fn len(&self) -> usize {
        self.mass.len()
    }

    /// Bond terms `eⱼ = exp(kⱼ(qⱼ − qⱼ₊₁))` with `q_{l+1} = 0`.
    fn bonds(&self, q: &[f64]) -> Result<Vec<f64>> {
        let l = self.len();
        (0..l)
            .map(|j| {
                let next = if j + 1 < l { q[j + 1] } else { 0.0 };
                guarded_exp(self.stiffness[j] * (q[j] - next), j).map(|(e, _)| e)
            })
            .collect()
    }
}

impl ExplicitTerms for LatticeForces {
    fn state_dim(&self) -> usize {
        2 * self.len()
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("control", 3, u.len())?;
        let l = self.len();
        let e = self.bonds(&x[..l])?;
        let mut out = vec![0.0; 2 * l];
        for j in 0..l {
            let previous = if j > 0 { e[j - 1] } else { 1.0 };
            let force = e[j] - previous;
            out[l + j] = (u[self.cluster[j]] - force) / self.mass[j];
        }
        Ok(out)
    }

    fn jvp_state(&self, x: &[f64], _u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let l = self.len();
        let e = self.bonds(&x[..l])?;
        let de: Vec<f64> = (0..l)
            .map(|j| {
                let next = if j + 1 < l { v[j + 1] } else { 0.0 };
                self.stiffness[j] * e[j] * (v[j] - next)
            })
            .collect();
        let mut out = vec![0.0; 2 * l];
        for j in 0..l {
            let previous = if j > 0 { de[j - 1] } else { 0.0 };
            out[l + j] = -(de[j] - previous) / self.mass[j];
        }
        Ok(out)
    }

    fn vjp_state(&self, x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let l = self.len();
        let e = self.bonds(&x[..l])?;
        let w: Vec<f64> = (0..l).map(|j| -z[l + j] / self.mass[j]).collect();
        let mut out = vec![0.0; 2 * l];
        for j in 0..l {
            let next = if j + 1 < l { w[j + 1] } else { 0.0 };
            let s = (w[j] - next) * self.stiffness[j] * e[j];
            out[j] += s;
            if j + 1 < l {
                out[j + 1] -= s;
            }
        }
        Ok(out)
    }

    fn jvp_control(&self, _x: &[f64], _u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let l = self.len();
        let mut out = vec![0.0; 2 * l];
        for j in 0..l {
            out[l + j] = w[self.cluster[j]] / self.mass[j];
        }
        Ok(out)
    }

    fn vjp_control(&self, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let l = self.len();
        let mut out = vec![0.0; 3];
        for j in 0..l {
            out[self.cluster[j]] += z[l + j] / self.mass[j];
        }
        Ok(out)
    }
}
