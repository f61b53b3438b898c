//! Why a data-driven (PCA) latent space is a poor place to design a
//! stabilizing policy.
//!
//! On the two-state example the dominant direction of snapshot data is the
//! *right* unstable eigenvector, while feedback through a latent coordinate
//! only decouples from the stable dynamics along the *left* one. The sweep
//! here compares both coders over a grid of scalar gains, and the snapshot
//! experiments measure how much data PCA needs before its projected model
//! even shows an unstable eigenvalue.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{make_toy2d, Environment};
use crate::error::{check_len, Error, Result};
use crate::linalg::{
    dense_eigendecompose, dot, norm2, sub, subspace_angles, DenseMatrix, EigenvectorRequest,
};
use crate::manifold::{dense_unstable_basis, pca_basis, LinearCoder, DEFAULT_MARGIN};
use crate::rom::project_model;
use crate::train::{closed_loop_spectrum, default_blowup_threshold};

/// Snapshot generation: start at `x̄`, drive with `u = ū + excitation·gaussian`,
/// record every state, restart at `x̄` once `‖x − x̄‖∞` exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotProtocol {
    pub excitation: f64,
    /// Defaults to `1e3·(1 + ‖x̄‖∞)`.
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl Default for SnapshotProtocol {
    fn default() -> Self {
        Self {
            excitation: 1e-3,
            threshold: None,
            seed: 0,
        }
    }
}

/// First `count` snapshots of the protocol, as deviations from `x̄`.
pub fn excitation_snapshots(
    env: &Environment,
    protocol: &SnapshotProtocol,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let threshold = protocol
        .threshold
        .unwrap_or_else(|| default_blowup_threshold(env.xbar()));
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let mut snapshots = Vec::with_capacity(count);
    let mut x = env.xbar().to_vec();
    while snapshots.len() < count {
        snapshots.push(sub(&x, env.xbar()));
        let u: Vec<f64> = env
            .ubar()
            .iter()
            .map(|u| {
                let n: f64 = rng.sample(StandardNormal);
                u + protocol.excitation * n
            })
            .collect();
        let next = env.step(&x, &u);
        x = match next {
            Ok(next)
                if next
                    .iter()
                    .zip(env.xbar())
                    .all(|(a, b)| (a - b).abs() <= threshold) =>
            {
                next
            }
            Ok(_) | Err(Error::StateBlowup { .. }) => env.xbar().to_vec(),
            Err(e) => return Err(e),
        };
    }
    Ok(snapshots)
}

/// Smallest number of protocol snapshots whose leading principal direction
/// `v` gives a projected model `vᵀ Jₓ v` of modulus at least one.
pub fn samples_to_detect_instability(
    env: &Environment,
    protocol: &SnapshotProtocol,
    budget: usize,
) -> Result<usize> {
    let n = env.nh();
    let snapshots = excitation_snapshots(env, protocol, budget)?;
    let mut gram = DenseMatrix::zeros(n, n);
    for (k, s) in snapshots.iter().enumerate() {
        if s.iter().all(|v| *v == 0.0) {
            continue;
        }
        gram = gram.add(&DenseMatrix::from_fn(n, n, |i, j| s[i] * s[j]))?;
        let v = leading_direction(&gram)?;
        let jv = env.jvp_state(env.xbar(), env.ubar(), &v)?;
        if dot(&v, &jv).abs() >= 1.0 {
            return Ok(k + 1);
        }
    }
    Err(Error::NotDetected { budget })
}

/// Unit eigenvector of the largest eigenvalue of a symmetric matrix.
fn leading_direction(sym: &DenseMatrix) -> Result<Vec<f64>> {
    let spectrum = dense_eigendecompose(sym, EigenvectorRequest::Right)?;
    let v: Vec<f64> = spectrum.right.expect("requested right vectors")[0]
        .iter()
        .map(|c| c.re)
        .collect();
    let norm = norm2(&v);
    Ok(v.iter().map(|x| x / norm).collect())
}

/// One-dimensional PCA coder from `count` protocol snapshots.
pub fn converged_pca_coder(
    env: &Environment,
    protocol: &SnapshotProtocol,
    count: usize,
) -> Result<LinearCoder> {
    let snapshots = excitation_snapshots(env, protocol, count)?;
    let shifted: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.iter().zip(env.xbar()).map(|(a, b)| a + b).collect())
        .collect();
    let data = DenseMatrix::from_columns(env.nh(), &shifted)?;
    pca_basis(&data, 1, env.xbar(), env.ubar())
}

/// Spectra of the policy `u = ū + ψ·z` for one gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub psi: f64,
    /// Eigenvalue of the projected closed loop `J̃ₓ + J̃ᵤ ψ`.
    pub latent_eigenvalue: Complex64,
    /// Full closed-loop eigenvalues, descending modulus.
    pub full_eigenvalues: Vec<Complex64>,
    /// `log₁₀ ‖x(t) − x̄‖₂` of the controlled trajectory, up to blowup.
    pub log_magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Gains whose full closed loop has spectral radius below one.
    pub fn stabilizing(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.full_eigenvalues[0].norm() < 1.0)
            .map(|p| p.psi)
            .collect()
    }
}

/// Sweeps scalar gains over a one-dimensional coder of a two-state system
/// with one input. Trajectories start at `x̄ + initial_offset` and run for
/// `trajectory_steps` steps.
pub fn pca_policy_sweep(
    env: &Environment,
    coder: &LinearCoder,
    psi_grid: &[f64],
    initial_offset: &[f64],
    trajectory_steps: usize,
) -> Result<SweepResult> {
    if env.nh() != 2 || env.np() != 1 || coder.latent_dim() != 1 {
        return Err(Error::invalid(
            "policy sweep needs a two-state, one-input system and a 1-D coder",
        ));
    }
    check_len("initial offset", env.nh(), initial_offset.len())?;
    let model = project_model(env, coder.clone())?;
    let threshold = default_blowup_threshold(env.xbar());
    let mut points = Vec::with_capacity(psi_grid.len());
    for &psi in psi_grid {
        let gain = DenseMatrix::from_rows(&[&[psi]]);
        let latent = model.jx[(0, 0)] + model.ju[(0, 0)] * psi;
        let full = closed_loop_spectrum(env, coder.basis(), &gain)?;

        let mut x: Vec<f64> = env
            .xbar()
            .iter()
            .zip(initial_offset)
            .map(|(a, b)| a + b)
            .collect();
        let mut log_magnitudes = Vec::with_capacity(trajectory_steps + 1);
        for t in 0..=trajectory_steps {
            let dev = sub(&x, env.xbar());
            log_magnitudes.push(norm2(&dev).log10());
            if t == trajectory_steps || dev.iter().any(|v| !(v.abs() <= threshold)) {
                break;
            }
            let z = coder.encode(&x)?;
            x = env.step(&x, &[env.ubar()[0] + psi * z[0]])?;
        }
        points.push(SweepPoint {
            psi,
            latent_eigenvalue: Complex64::new(latent, 0.0),
            full_eigenvalues: full.eigenvalues,
            log_magnitudes,
        });
    }
    Ok(SweepResult { points })
}

pub const SWEEP_HEADER: &str = "psi,lat_eig_mod,full_eig1_mod,full_eig2_mod";

pub fn write_sweep_csv<W: Write>(result: &SweepResult, out: &mut W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for p in &result.points {
        writeln!(
            out,
            "{},{},{},{}",
            p.psi,
            p.latent_eigenvalue.norm(),
            p.full_eigenvalues[0].norm(),
            p.full_eigenvalues[1].norm()
        )?;
    }
    Ok(())
}

/// Distance between the PCA direction and the left unstable eigenvector of
/// the two-state example for one coupling strength.
#[derive(Debug, Clone, PartialEq)]
pub struct AnglePoint {
    pub epsilon: f64,
    /// Principal angle in `[0, π/2]`.
    pub angle: f64,
    /// `None` when instability was not detected within the budget.
    pub samples_to_detect: Option<usize>,
}

/// For each coupling `ε`: the angle between the 1-D PCA subspace of
/// `budget` snapshots and the left unstable eigenvector, and the detection
/// count.
pub fn angle_vs_epsilon(
    epsilons: &[f64],
    protocol: &SnapshotProtocol,
    budget: usize,
) -> Result<Vec<AnglePoint>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            let env = make_toy2d(epsilon)?;
            let pca = converged_pca_coder(&env, protocol, budget)?;
            let left = dense_unstable_basis(&env, env.xbar(), env.ubar(), DEFAULT_MARGIN)?;
            let angle = subspace_angles(pca.basis(), &left.w)?[0];
            let samples_to_detect = match samples_to_detect_instability(&env, protocol, budget) {
                Ok(k) => Some(k),
                Err(Error::NotDetected { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(AnglePoint {
                epsilon,
                angle,
                samples_to_detect,
            })
        })
        .collect()
}

pub const ANGLE_HEADER: &str = "epsilon,angle_rad,samples_to_detect";

/// Undetected counts are written as an empty field.
pub fn write_angle_csv<W: Write>(points: &[AnglePoint], out: &mut W) -> Result<()> {
    writeln!(out, "{ANGLE_HEADER}")?;
    for p in points {
        let count = p.samples_to_detect.map_or(String::new(), |k| k.to_string());
        writeln!(out, "{},{},{}", p.epsilon, p.angle, count)?;
    }
    Ok(())
}
