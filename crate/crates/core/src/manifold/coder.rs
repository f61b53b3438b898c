use crate::error::{check_len, Error, Result};
use crate::linalg::{svd_thin, DenseMatrix};

/// Encoder `z = Wᵀ(x − x̄)` and decoder `x = x̄ + W z` for a basis with
/// orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoder {
    basis: DenseMatrix,
    center_x: Vec<f64>,
    center_u: Vec<f64>,
}

impl LinearCoder {
    pub fn new(basis: DenseMatrix, center_x: Vec<f64>, center_u: Vec<f64>) -> Result<Self> {
        check_len("coder center", basis.rows(), center_x.len())?;
        if center_x.iter().chain(&center_u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coder center",
            });
        }
        Ok(Self {
            basis,
            center_x,
            center_u,
        })
    }

    /// Full-state coder `W = I` (used by the direct method).
    pub fn identity(center_x: Vec<f64>, center_u: Vec<f64>) -> Result<Self> {
        Self::new(DenseMatrix::identity(center_x.len()), center_x, center_u)
    }

    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn center_x(&self) -> &[f64] {
        &self.center_x
    }

    pub fn center_u(&self) -> &[f64] {
        &self.center_u
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim(), x.len())?;
        let shifted: Vec<f64> = x.iter().zip(&self.center_x).map(|(a, b)| a - b).collect();
        self.basis.tr_matvec(&shifted)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", self.latent_dim(), z.len())?;
        let mut x = self.basis.matvec(z)?;
        for (xi, c) in x.iter_mut().zip(&self.center_x) {
            *xi += c;
        }
        Ok(x)
    }

    /// Encodes a direction (no centering): `Wᵀ v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.basis.tr_matvec(v)
    }
}

/// Leading `nr` principal directions of the snapshots (columns of
/// `snapshots`) centered at `center_x`.
pub fn pca_basis(
    snapshots: &DenseMatrix,
    nr: usize,
    center_x: &[f64],
    center_u: &[f64],
) -> Result<LinearCoder> {
    check_len("snapshot state dim", center_x.len(), snapshots.rows())?;
    if nr == 0 || snapshots.cols() < nr {
        return Err(Error::RankDeficient {
            rank: snapshots.cols().min(nr),
            expected: nr,
        });
    }
    let centered = DenseMatrix::from_fn(snapshots.rows(), snapshots.cols(), |i, j| {
        snapshots[(i, j)] - center_x[i]
    });
    let svd = svd_thin(&centered)?;
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    let rank = svd
        .singular_values
        .iter()
        .take_while(|s| top > 0.0 && **s > 1e-12 * top)
        .count();
    if rank < nr {
        return Err(Error::RankDeficient { rank, expected: nr });
    }
    let mut basis = svd.u.column_block(0, nr);
    super::normalize_signs(&mut basis);
    LinearCoder::new(basis, center_x.to_vec(), center_u.to_vec())
}
