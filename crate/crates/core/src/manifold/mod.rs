//! Linear latent manifolds of a full-order system.
//!
//! The unstable manifold near a steady state is approximated by the left
//! unstable eigenspace of the state Jacobian, spanned by the eigenvectors of
//! `Jₓᵀ` whose eigenvalues lie on or outside the unit circle. It is computed
//! matrix-free from adjoint queries ([`arnoldi_unstable_basis`]) or, for small
//! systems, from the assembled Jacobian ([`dense_unstable_basis`]). A
//! [`LinearCoder`] wraps any orthonormal basis as an encoder/decoder pair;
//! [`pca_basis`] builds one from snapshot data instead.

mod arnoldi;
mod coder;

pub use arnoldi::{arnoldi_unstable_basis, dense_unstable_basis, ArnoldiOptions};
pub use coder::{pca_basis, LinearCoder};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, DenseMatrix};

/// Default margin below one for counting an eigenvalue as unstable.
pub const DEFAULT_MARGIN: f64 = 1e-9;

/// Orthonormal basis `W` (`nh × nr`) of a left unstable eigenspace.
#[derive(Debug, Clone)]
pub struct UnstableBasis {
    pub w: DenseMatrix,
    /// Eigenvalues of `Wᵀ Jₓ W`, descending modulus.
    pub eigenvalues: Vec<Complex64>,
    /// Per-eigenpair residual `‖Jₓᵀ x − λ x‖` of the unit Ritz vectors.
    pub residuals: Vec<f64>,
    /// `‖Jₓᵀ W − W (Wᵀ Jₓᵀ W)‖_F`
    pub invariance_residual: f64,
}

impl UnstableBasis {
    pub fn nr(&self) -> usize {
        self.w.cols()
    }

    pub fn nh(&self) -> usize {
        self.w.rows()
    }

    pub fn coder(&self, center_x: &[f64], center_u: &[f64]) -> Result<LinearCoder> {
        LinearCoder::new(self.w.clone(), center_x.to_vec(), center_u.to_vec())
    }
}

/// Real columns spanning the eigenvectors: `Re v` for real eigenvalues and
/// `[Re v | Im v]` for each conjugate pair (taken from the member with
/// positive imaginary part), orthonormalized.
pub(crate) fn fold_real(n: usize, pairs: &[(Complex64, Vec<Complex64>)]) -> Result<DenseMatrix> {
    let mut columns = Vec::new();
    for (lambda, v) in pairs {
        if lambda.im < 0.0 {
            continue;
        }
        columns.push(v.iter().map(|c| c.re).collect::<Vec<_>>());
        if lambda.im > 0.0 {
            columns.push(v.iter().map(|c| c.im).collect());
        }
    }
    if columns.is_empty() {
        return Ok(DenseMatrix::zeros(n, 0));
    }
    orthonormalize(&DenseMatrix::from_columns(n, &columns)?)
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn normalize_signs(w: &mut DenseMatrix) {
    for j in 0..w.cols() {
        let col = w.column(j);
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            let flipped: Vec<f64> = col.iter().map(|v| -v).collect();
            w.set_column(j, &flipped).expect("column length");
        }
    }
}

/// Basis matrix as CSV: header `w_0,..,w_{nr-1}`, one row per state.
pub fn write_basis_csv<W: std::io::Write>(w: &DenseMatrix, out: &mut W) -> Result<()> {
    let header: Vec<String> = (0..w.cols()).map(|j| format!("w_{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..w.rows() {
        let row: Vec<String> = w.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_basis_csv<R: std::io::BufRead>(input: R) -> Result<DenseMatrix> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let cols = header.trim().split(',').filter(|c| !c.is_empty()).count();
    let expected: Vec<String> = (0..cols).map(|j| format!("w_{j}")).collect();
    if cols == 0 || header.trim() != expected.join(",") {
        return Err(Error::Parse(format!("unexpected basis header `{header}`")));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("basis row {}: {e}", rows + 2)))?;
        if values.len() != cols {
            return Err(Error::Parse(format!(
                "basis row {} has {} values",
                rows + 2,
                values.len()
            )));
        }
        data.extend(values);
        rows += 1;
    }
    DenseMatrix::new(rows, cols, data)
}

pub const EIGENVALUE_HEADER: &str = "index,re,im,modulus,residual";

/// Unstable eigenvalues with their Ritz residuals.
pub fn write_eigenvalue_csv<W: std::io::Write>(basis: &UnstableBasis, out: &mut W) -> Result<()> {
    writeln!(out, "{EIGENVALUE_HEADER}")?;
    for (k, (l, r)) in basis.eigenvalues.iter().zip(&basis.residuals).enumerate() {
        writeln!(out, "{k},{},{},{},{r}", l.re, l.im, l.norm())?;
    }
    Ok(())
}
