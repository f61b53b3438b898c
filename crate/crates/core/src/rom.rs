//! Linear latent model of the unstable dynamics, `z⁺ = Jx z + Ju u`.
//!
//! Two assembly routes exist: projecting Jacobian-vector products onto the
//! basis ([`assemble_rom_adjoint`]) and identifying the model from
//! `nr + np` perturbed steps of the full system ([`assemble_rom_sysid`]).

use std::io::{BufRead, Write};

use crate::env::{Environment, LinearDynamics};
use crate::error::{check_len, Error, Result};
use crate::linalg::{norm_inf, DenseMatrix};
use crate::manifold::{LinearCoder, UnstableBasis};

#[derive(Debug, Clone)]
pub struct LatentModel {
    pub jx: DenseMatrix,
    pub ju: DenseMatrix,
    pub coder: LinearCoder,
    /// Sampling time of the full system.
    pub tau: f64,
}

impl LatentModel {
    pub fn new(jx: DenseMatrix, ju: DenseMatrix, coder: LinearCoder, tau: f64) -> Result<Self> {
        if !jx.is_square() {
            return Err(Error::NonSquare {
                rows: jx.rows(),
                cols: jx.cols(),
            });
        }
        check_len("latent control rows", jx.rows(), ju.rows())?;
        check_len("coder latent dim", jx.rows(), coder.latent_dim())?;
        check_len("coder control dim", ju.cols(), coder.center_u().len())?;
        Ok(Self { jx, ju, coder, tau })
    }

    pub fn nr(&self) -> usize {
        self.jx.rows()
    }

    pub fn np(&self) -> usize {
        self.ju.cols()
    }

    /// `z⁺ = Jx z + Ju u` where `u` is the control deviation from `ū`.
    pub fn step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("latent state", self.nr(), z.len())?;
        check_len("latent control", self.np(), u.len())?;
        let mut out = vec![0.0; self.nr()];
        for (i, o) in out.iter_mut().enumerate() {
            let jx_row = self.jx.row(i);
            let ju_row = self.ju.row(i);
            *o = jx_row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
                + ju_row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(out)
    }

    /// Multiply-adds performed by one [`LatentModel::step`].
    pub fn step_cost(&self) -> usize {
        self.nr() * (self.nr() + self.np())
    }

    /// The latent model as an environment with steady state `(0, 0)`.
    pub fn as_environment(&self, name: &str) -> Result<Environment> {
        if self.nr() == 0 {
            return Err(Error::invalid("latent model has no unstable modes"));
        }
        let dynamics = LinearDynamics::new(self.jx.clone(), self.ju.clone())?;
        dynamics.into_environment(name, self.tau)
    }

    /// Writes `Jx` then `Ju` as `row,col,value` sections, each introduced by
    /// a `# <name> <rows> <cols>` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (name, m) in [("jx", &self.jx), ("ju", &self.ju)] {
            writeln!(out, "# {name} {} {}", m.rows(), m.cols())?;
            writeln!(out, "row,col,value")?;
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    writeln!(out, "{i},{j},{}", m[(i, j)])?;
                }
            }
        }
        Ok(())
    }
}

/// Reads the two matrices written by [`LatentModel::write_csv`].
pub fn read_rom_csv<R: BufRead>(input: R) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut sections: Vec<(String, DenseMatrix)> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let bad = |msg: &str| Error::Parse(format!("rom csv line {}: {msg}", lineno + 1));
        if line.is_empty() || line == "row,col,value" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad("expected `# <name> <rows> <cols>`"));
            };
            let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| bad("bad column count"))?;
            sections.push((name.to_string(), DenseMatrix::zeros(rows, cols)));
            continue;
        }
        let Some((_, m)) = sections.last_mut() else {
            return Err(bad("entry before section header"));
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [i, j, v] = fields[..] else {
            return Err(bad("expected row,col,value"));
        };
        let i: usize = i.trim().parse().map_err(|_| bad("bad row index"))?;
        let j: usize = j.trim().parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
        if i >= m.rows() || j >= m.cols() || !v.is_finite() {
            return Err(bad("entry out of range"));
        }
        m[(i, j)] = v;
    }
    let take = |name: &str| {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::Parse(format!("rom csv: missing section {name}")))
    };
    Ok((take("jx")?, take("ju")?))
}

/// `Jx = Wᵀ(∇ₓf·W)` and `Ju = Wᵀ(∇ᵤf)` from `nr` tangent and `np` control
/// Jacobian products at the steady state.
pub fn assemble_rom_adjoint(env: &Environment, basis: &UnstableBasis) -> Result<LatentModel> {
    check_len("basis rows", env.nh(), basis.nh())?;
    project_model(env, basis.coder(env.xbar(), env.ubar())?)
}

/// Galerkin projection `(Wᵀ Jₓ W, Wᵀ Jᵤ)` of the linearization onto the
/// columns of any orthonormal coder, e.g. a PCA basis.
pub fn project_model(env: &Environment, coder: LinearCoder) -> Result<LatentModel> {
    check_len("coder rows", env.nh(), coder.state_dim())?;
    let (nr, np) = (coder.latent_dim(), env.np());
    let mut jx = DenseMatrix::zeros(nr, nr);
    for j in 0..nr {
        let col = env.jvp_state(env.xbar(), env.ubar(), &coder.basis().column(j))?;
        jx.set_column(j, &coder.project(&col)?)?;
    }
    let mut ju = DenseMatrix::zeros(nr, np);
    let mut e = vec![0.0; np];
    for j in 0..np {
        e[j] = 1.0;
        let col = env.jvp_control(env.xbar(), env.ubar(), &e)?;
        ju.set_column(j, &coder.project(&col)?)?;
        e[j] = 0.0;
    }
    LatentModel::new(jx, ju, coder, env.spec().tau)
}

/// Default probe size `√ε·(1 + ‖x̄‖∞)`.
pub fn default_sysid_delta(xbar: &[f64]) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + norm_inf(xbar))
}

/// Latent model from `nr + np` forward steps: column `j` of `Jx` is
/// `E(f(x̄ + δ·W eⱼ, ū))/δ` and column `j` of `Ju` is `E(f(x̄, ū + δ eⱼ))/δ`.
pub fn assemble_rom_sysid(
    env: &Environment,
    basis: &UnstableBasis,
    delta: f64,
) -> Result<LatentModel> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(
            "system identification probe must be positive",
        ));
    }
    check_len("basis rows", env.nh(), basis.nh())?;
    let coder = basis.coder(env.xbar(), env.ubar())?;
    let (nr, np) = (basis.nr(), env.np());
    let mut jx = DenseMatrix::zeros(nr, nr);
    for j in 0..nr {
        let probe = coder.decode(&unit(nr, j, delta))?;
        let col = coder.encode(&env.step(&probe, env.ubar())?)?;
        jx.set_column(j, &col.iter().map(|v| v / delta).collect::<Vec<_>>())?;
    }
    let mut ju = DenseMatrix::zeros(nr, np);
    for j in 0..np {
        let u: Vec<f64> = env
            .ubar()
            .iter()
            .zip(unit(np, j, delta))
            .map(|(a, b)| a + b)
            .collect();
        let col = coder.encode(&env.step(env.xbar(), &u)?)?;
        ju.set_column(j, &col.iter().map(|v| v / delta).collect::<Vec<_>>())?;
    }
    LatentModel::new(jx, ju, coder, env.spec().tau)
}

fn unit(n: usize, j: usize, scale: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = scale;
    e
}
