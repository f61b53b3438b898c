use super::{dot, DenseMatrix};
use crate::error::Result;

/// Thin SVD `A = U·diag(σ)·Vᵀ` with `k = min(rows, cols)` singular values in
/// descending order. Columns of `U` belonging to zero singular values are
/// left as zero vectors.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

const MAX_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd_thin(a: &DenseMatrix) -> Result<Svd> {
    if a.rows() < a.cols() {
        let t = svd_thin(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (m, n) = (a.rows(), a.cols());
    // Work column-major: cols[j] is column j.
    let mut cols: Vec<Vec<f64>> = a.columns();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (dot(c, c).sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u = DenseMatrix::zeros(m, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (k, (sigma, j)) in order.into_iter().enumerate() {
        singular_values.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, k)] = cols[j][i] / sigma;
            }
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}
