use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::Environment;
use crate::error::{check_len, Error, Result};
use crate::linalg::{
    axpy, dense_eigendecompose, dot, eigenvector_for, norm2, DenseMatrix, EigenvectorRequest,
};

use super::{fold_real, normalize_signs, UnstableBasis, DEFAULT_MARGIN};

/// Consecutive restarts without locking a vector or seeing a Ritz value
/// whose residual ball lies outside the threshold; past this, Ritz values
/// straddling the threshold are attributed to clustered stable modes.
const STALL_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct ArnoldiOptions {
    /// Eigenvalues with modulus `≥ 1 − margin` count as unstable.
    pub margin: f64,
    /// Krylov subspace dimension per cycle.
    pub max_subspace: usize,
    pub max_restarts: usize,
    /// Ritz pairs are accepted once the residual is below
    /// `tolerance·max(1, |θ|)`.
    pub tolerance: f64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            max_subspace: 20,
            max_restarts: 200,
            tolerance: 1e-10,
        }
    }
}

impl ArnoldiOptions {
    /// Subspace size `max(20, 2·nr_expected + 10)`.
    pub fn for_expected_modes(nr_expected: usize) -> Self {
        Self {
            max_subspace: (2 * nr_expected + 10).max(20),
            ..Default::default()
        }
    }
}

/// Left unstable eigenspace at `(xbar, ubar)` from adjoint queries only.
///
/// Krylov-Schur style Arnoldi on `z ↦ Jₓᵀz` with full reorthogonalization.
/// Each restart keeps the leading half of the Ritz vectors (conjugate pairs
/// folded into real blocks); converged unstable Ritz vectors are locked and
/// deflated. The iteration stops once no unconverged unstable Ritz values
/// remain and the leading stable Ritz value is resolved well enough to sit
/// clearly below the threshold, or when a cluster of near-unit stable modes
/// keeps producing straddling Ritz values without any progress.
pub fn arnoldi_unstable_basis<R: Rng + ?Sized>(
    env: &Environment,
    xbar: &[f64],
    ubar: &[f64],
    options: &ArnoldiOptions,
    rng: &mut R,
) -> Result<UnstableBasis> {
    let n = env.nh();
    check_len("steady state", n, xbar.len())?;
    check_len("steady control", env.np(), ubar.len())?;
    if options.max_subspace < 2 {
        return Err(Error::invalid(
            "Arnoldi subspace dimension must be at least 2",
        ));
    }
    let op = |z: &[f64]| env.vjp_state(xbar, ubar, z);
    let threshold = 1.0 - options.margin;

    let mut locked: Vec<Vec<f64>> = Vec::new();
    // Invariant subspaces (found through breakdown) holding only stable modes.
    let mut explored: Vec<Vec<f64>> = Vec::new();
    let mut space = KrylovSpace::new(options.max_subspace, random_unit(rng, n, &[]));
    let mut restarts = 0;
    let mut stalled = 0;
    loop {
        let mut deflation = locked.clone();
        deflation.extend(explored.iter().cloned());
        let available = n - deflation.len();
        if available == 0 {
            break;
        }
        space.expand(&op, &deflation, options.max_subspace.min(available))?;
        let k = space.dim();
        let spectrum = dense_eigendecompose(&space.projected(), EigenvectorRequest::Right)?;
        let vectors = spectrum.right.expect("requested right vectors");
        let ritz: Vec<RitzPair> = spectrum
            .eigenvalues
            .into_iter()
            .zip(vectors)
            .map(|(theta, y)| {
                let ynorm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                let r: Complex64 = space.next_row.iter().zip(&y).map(|(a, b)| b * a).sum();
                RitzPair {
                    theta,
                    residual: r.norm() / ynorm,
                    y,
                }
            })
            .collect();

        let converged = |p: &RitzPair| p.residual <= options.tolerance * p.theta.norm().max(1.0);
        let wanted = |p: &RitzPair| p.theta.norm() >= threshold;
        let lock: Vec<&RitzPair> = ritz.iter().filter(|p| wanted(p) && converged(p)).collect();
        let rest: Vec<&RitzPair> = ritz
            .iter()
            .filter(|p| !(wanted(p) && converged(p)))
            .collect();
        let pending = rest.iter().filter(|p| wanted(p)).count();
        // Residual ball entirely outside the threshold.
        let certain = rest
            .iter()
            .any(|p| wanted(p) && p.theta.norm() - p.residual >= threshold);
        if !lock.is_empty() || certain {
            stalled = 0;
        } else {
            stalled += 1;
        }

        let invariant = space.next.is_none();
        let boundary_resolved = rest
            .iter()
            .find(|p| !wanted(p))
            .is_some_and(|b| b.residual <= 0.1 * (threshold - b.theta.norm()));
        let settled = (pending == 0
            && ((invariant && k == available) || (!invariant && boundary_resolved)))
            || stalled >= STALL_LIMIT;

        if settled {
            locked.extend(space.restart(&lock, &[], &locked)?);
            break;
        }
        if invariant && pending == 0 {
            locked.extend(space.restart(&lock, &rest, &locked)?);
            explored.append(&mut space.v);
            space.next_row.clear();
        } else {
            let keep_count = pending.max(k / 2).min(rest.len());
            let mut keep: Vec<&RitzPair> = rest[..keep_count].to_vec();
            if keep.last().is_some_and(|p| p.theta.im > 0.0) && keep_count < rest.len() {
                keep.push(rest[keep_count]);
            }
            locked.extend(space.restart(&lock, &keep, &locked)?);
        }
        if space.next.is_none() {
            let mut avoid = locked.clone();
            avoid.extend(explored.iter().cloned());
            avoid.extend(space.v.iter().cloned());
            if avoid.len() >= n {
                break;
            }
            space.next = Some(random_unit(rng, n, &avoid));
            space.next_row = vec![0.0; space.dim()];
        }
        restarts += 1;
        if restarts > options.max_restarts {
            return Err(Error::SubspaceExhausted {
                unconverged: pending.max(1),
                restarts: options.max_restarts,
            });
        }
    }

    let mut w = if locked.is_empty() {
        DenseMatrix::zeros(n, 0)
    } else {
        DenseMatrix::from_columns(n, &locked)?
    };
    normalize_signs(&mut w);
    finalize(&op, w, threshold)
}

/// Reference implementation from the assembled Jacobian; only sensible for
/// small `nh`.
pub fn dense_unstable_basis(
    env: &Environment,
    xbar: &[f64],
    ubar: &[f64],
    margin: f64,
) -> Result<UnstableBasis> {
    let jt = env.state_jacobian(xbar, ubar)?.transpose();
    let threshold = 1.0 - margin;
    let spectrum = dense_eigendecompose(&jt, EigenvectorRequest::None)?;
    let mut pairs = Vec::new();
    for &lambda in spectrum
        .eigenvalues
        .iter()
        .filter(|l| l.norm() >= threshold)
    {
        if lambda.im >= 0.0 {
            pairs.push((lambda, eigenvector_for(&jt, lambda)?));
        }
    }
    let mut w = fold_real(env.nh(), &pairs)?;
    normalize_signs(&mut w);
    let op = |z: &[f64]| jt.matvec(z);
    finalize(&op, w, threshold)
}

fn finalize(
    op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    w: DenseMatrix,
    threshold: f64,
) -> Result<UnstableBasis> {
    let (n, k) = (w.rows(), w.cols());
    if k == 0 {
        return Ok(UnstableBasis {
            w,
            eigenvalues: Vec::new(),
            residuals: Vec::new(),
            invariance_residual: 0.0,
        });
    }
    let bw_cols = w
        .columns()
        .iter()
        .map(|c| op(c))
        .collect::<Result<Vec<_>>>()?;
    let bw = DenseMatrix::from_columns(n, &bw_cols)?;
    let t = w.transpose().matmul(&bw)?;
    let invariance_residual = bw.sub(&w.matmul(&t)?)?.norm_fro();

    let spectrum = dense_eigendecompose(&t, EigenvectorRequest::Right)?;
    let vectors = spectrum.right.expect("requested right vectors");
    let mut eigenvalues = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for (theta, y) in spectrum.eigenvalues.into_iter().zip(vectors) {
        if theta.norm() < threshold {
            continue;
        }
        let ynorm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut sq = 0.0;
        for i in 0..n {
            let mut r = Complex64::new(0.0, 0.0);
            for (j, yj) in y.iter().enumerate() {
                r += (bw[(i, j)] - theta * w[(i, j)]) * yj;
            }
            sq += r.norm_sqr();
        }
        eigenvalues.push(theta);
        residuals.push(sq.sqrt() / ynorm);
    }
    Ok(UnstableBasis {
        w,
        eigenvalues,
        residuals,
        invariance_residual,
    })
}

struct RitzPair {
    theta: Complex64,
    residual: f64,
    y: Vec<Complex64>,
}

/// Orthonormal `V` with `B V = V H + next · next_rowᵀ`, where `next` is
/// orthogonal to `V` and to the locked vectors (`None` once `V` is invariant).
struct KrylovSpace {
    v: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    next: Option<Vec<f64>>,
    next_row: Vec<f64>,
}

impl KrylovSpace {
    fn new(capacity: usize, start: Vec<f64>) -> Self {
        Self {
            v: Vec::with_capacity(capacity),
            h: vec![vec![0.0; capacity]; capacity],
            next: Some(start),
            next_row: Vec::new(),
        }
    }

    fn dim(&self) -> usize {
        self.v.len()
    }

    fn projected(&self) -> DenseMatrix {
        let k = self.dim();
        DenseMatrix::from_fn(k, k, |i, j| self.h[i][j])
    }

    fn expand(
        &mut self,
        op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        locked: &[Vec<f64>],
        target: usize,
    ) -> Result<()> {
        while self.dim() < target {
            let Some(next) = self.next.take() else {
                break;
            };
            let j = self.dim();
            self.h[j] = vec![0.0; self.h[j].len()];
            self.h[j][..j].copy_from_slice(&self.next_row);
            self.v.push(next);
            let mut w = op(&self.v[j])?;
            let scale = norm2(&w);
            for _ in 0..2 {
                for q in locked {
                    let c = dot(q, &w);
                    axpy(-c, q, &mut w);
                }
                for (i, vi) in self.v.iter().enumerate() {
                    let c = dot(vi, &w);
                    self.h[i][j] += c;
                    axpy(-c, vi, &mut w);
                }
            }
            let beta = norm2(&w);
            self.next_row = vec![0.0; j + 1];
            if beta <= 1e-14 * scale.max(1e-300) {
                break;
            }
            self.next_row[j] = beta;
            w.iter_mut().for_each(|x| *x /= beta);
            self.next = Some(w);
        }
        Ok(())
    }

    /// Compresses the space onto the `keep` Ritz vectors and returns the
    /// (orthonormal) vectors spanned by `lock`, which leave the space.
    fn restart(
        &mut self,
        lock: &[&RitzPair],
        keep: &[&RitzPair],
        locked: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let k = self.dim();
        let real_block = |pairs: &[&RitzPair]| -> Vec<Vec<f64>> {
            let mut cols = Vec::new();
            for p in pairs {
                if p.theta.im < 0.0 {
                    continue;
                }
                cols.push(p.y.iter().map(|c| c.re).collect::<Vec<_>>());
                if p.theta.im > 0.0 {
                    cols.push(p.y.iter().map(|c| c.im).collect());
                }
            }
            cols
        };
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut lock_cols = Vec::new();
        for col in real_block(lock) {
            if let Some(y) = deflate(col, &basis) {
                basis.push(y.clone());
                lock_cols.push(y);
            }
        }
        let mut keep_cols = Vec::new();
        for col in real_block(keep) {
            if let Some(y) = deflate(col, &basis) {
                basis.push(y.clone());
                keep_cols.push(y);
            }
        }

        let lift = |y: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; self.v[0].len()];
            for (vi, c) in self.v.iter().zip(y) {
                axpy(*c, vi, &mut out);
            }
            out
        };
        let mut new_locked: Vec<Vec<f64>> = Vec::new();
        for y in &lock_cols {
            let mut against = locked.to_vec();
            against.extend(new_locked.iter().cloned());
            if let Some(q) = deflate(lift(y), &against) {
                new_locked.push(q);
            }
        }

        let p = keep_cols.len();
        let v_new: Vec<Vec<f64>> = keep_cols.iter().map(|y| lift(y)).collect();
        let mut h_new = vec![vec![0.0; self.h.len()]; self.h.len()];
        for a in 0..p {
            for b in 0..p {
                let mut s = 0.0;
                for i in 0..k {
                    let hy: f64 = (0..k).map(|j| self.h[i][j] * keep_cols[b][j]).sum();
                    s += keep_cols[a][i] * hy;
                }
                h_new[a][b] = s;
            }
        }
        let row: Vec<f64> = keep_cols
            .iter()
            .map(|y| {
                if self.next_row.is_empty() {
                    0.0
                } else {
                    dot(&self.next_row, y)
                }
            })
            .collect();
        self.v = v_new;
        self.h = h_new;
        self.next_row = row;
        Ok(new_locked)
    }
}

/// Orthogonalizes against `locked` (twice) and normalizes; `None` if nothing
/// of the vector survives.
fn deflate(mut v: Vec<f64>, locked: &[Vec<f64>]) -> Option<Vec<f64>> {
    let original = norm2(&v);
    if original == 0.0 || !original.is_finite() {
        return None;
    }
    for _ in 0..2 {
        for q in locked {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
    }
    let nv = norm2(&v);
    if nv <= 1e-10 * original {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    Some(v)
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize, avoid: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(v) = deflate(v, avoid) {
            return v;
        }
    }
}
