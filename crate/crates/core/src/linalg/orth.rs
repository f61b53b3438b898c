use super::{axpy, dot, norm2, svd_thin, DenseMatrix};
use crate::error::{check_len, Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Thin QR by modified Gram-Schmidt applied twice per column.
///
/// Returns `(Q, R)` with `Q` having orthonormal columns and `R` upper
/// triangular. A column whose norm drops below `1e-12` of its original norm
/// after projection counts as dependent; the error reports the numerical
/// rank over all columns.
pub fn thin_qr(columns: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, k) = (columns.rows(), columns.cols());
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = DenseMatrix::zeros(k, k);
    let mut rank = 0;
    let mut deficient = false;
    for j in 0..k {
        let mut v = columns.column(j);
        let original = norm2(&v);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                if !deficient {
                    r[(i, j)] += c;
                }
                axpy(-c, qi, &mut v);
            }
        }
        let nv = norm2(&v);
        if original == 0.0 || nv <= RANK_TOL * original || nv == 0.0 {
            deficient = true;
            continue;
        }
        rank += 1;
        if !deficient {
            r[(j, j)] = nv;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    if deficient {
        return Err(Error::RankDeficient { rank, expected: k });
    }
    Ok((DenseMatrix::from_columns(n, &q)?, r))
}

/// Orthonormal basis spanning the same space as `columns`.
pub fn orthonormalize(columns: &DenseMatrix) -> Result<DenseMatrix> {
    thin_qr(columns).map(|(q, _)| q)
}

/// `(Wᵀ)†`, computed from `W = QR` as `Q·R⁻ᵀ`. For orthonormal `W` this is
/// `W` itself.
pub fn pseudoinverse_transpose(w: &DenseMatrix) -> Result<DenseMatrix> {
    let (q, r) = thin_qr(w)?;
    let k = r.rows();
    // X Rᵀ = Q, one row at a time: R xᵢ = qᵢ by back substitution.
    let mut out = DenseMatrix::zeros(q.rows(), k);
    for i in 0..q.rows() {
        let b = q.row(i);
        let mut x = vec![0.0; k];
        for jj in (0..k).rev() {
            let s: f64 = (jj + 1..k).map(|l| r[(jj, l)] * x[l]).sum();
            x[jj] = (b[jj] - s) / r[(jj, jj)];
        }
        for (j, v) in x.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Principal angles between the column spans of `u` and `v`, ascending, in
/// `[0, π/2]`. Both inputs must have orthonormal columns.
///
/// Small angles come from the sines (`σ((I − UUᵀ)V)`) and large ones from the
/// cosines (`σ(UᵀV)`), which keeps full accuracy at both ends.
pub fn subspace_angles(u: &DenseMatrix, v: &DenseMatrix) -> Result<Vec<f64>> {
    check_len("subspace row count", u.rows(), v.rows())?;
    let (u, v) = if u.cols() >= v.cols() { (u, v) } else { (v, u) };
    let q = v.cols();
    if q == 0 {
        return Ok(Vec::new());
    }
    let utv = u.transpose().matmul(v)?;
    let cos = svd_thin(&utv)?.singular_values;
    let residual = v.sub(&u.matmul(&utv)?)?;
    let mut sin = svd_thin(&residual)?.singular_values;
    sin.reverse();
    let mut angles: Vec<f64> = (0..q)
        .map(|i| {
            let c = cos.get(i).copied().unwrap_or(0.0).min(1.0);
            let s = sin.get(i).copied().unwrap_or(0.0).min(1.0);
            if c * c < 0.5 {
                c.acos()
            } else {
                s.asin()
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn normalizes_single_column() {
        let q = orthonormalize(&DenseMatrix::from_rows(&[&[1.0], &[2.0]])).unwrap();
        let s5 = 5f64.sqrt();
        assert!((q[(0, 0)] - 1.0 / s5).abs() < 1e-15);
        assert!((q[(1, 0)] - 2.0 / s5).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_input_is_kept() {
        let a = DenseMatrix::from_rows(&[&[0.6, 0.8], &[0.8, -0.6]]);
        let q = orthonormalize(&a).unwrap();
        for j in 0..2 {
            let sign = (q[(0, j)] * a[(0, j)]).signum();
            for i in 0..2 {
                assert!((q[(i, j)] - sign * a[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_columns_are_rank_deficient() {
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        match orthonormalize(&a) {
            Err(Error::RankDeficient { rank, expected }) => {
                assert_eq!((rank, expected), (1, 2));
            }
            other => panic!("expected rank-deficient, got {other:?}"),
        }
    }

    #[test]
    fn pseudoinverse_examples() {
        let w = DenseMatrix::from_rows(&[&[2.0], &[0.0]]);
        let p = pseudoinverse_transpose(&w).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15 && p[(1, 0)].abs() < 1e-15);

        let i3 = DenseMatrix::identity(3);
        assert_eq!(pseudoinverse_transpose(&i3).unwrap(), i3);

        let q = DenseMatrix::from_rows(&[&[0.6], &[0.8]]);
        let p = pseudoinverse_transpose(&q).unwrap();
        assert!((p[(0, 0)] - 0.6).abs() < 1e-15 && (p[(1, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pseudoinverse_general_full_rank() {
        let w = DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0], &[3.0, -1.0], &[1.0, 1.0]]);
        let p = pseudoinverse_transpose(&w).unwrap();
        let should_be_identity = w.transpose().matmul(&p).unwrap();
        let err = should_be_identity
            .sub(&DenseMatrix::identity(2))
            .unwrap()
            .norm_max();
        assert!(err < 1e-12);
    }

    #[test]
    fn angle_examples() {
        let e1 = DenseMatrix::from_rows(&[&[1.0], &[0.0]]);
        let e2 = DenseMatrix::from_rows(&[&[0.0], &[1.0]]);
        let s5 = 5f64.sqrt();
        let w = DenseMatrix::from_rows(&[&[1.0 / s5], &[2.0 / s5]]);
        assert!(subspace_angles(&e1, &e1).unwrap()[0].abs() < 1e-15);
        assert!((subspace_angles(&e1, &e2).unwrap()[0] - FRAC_PI_2).abs() < 1e-15);
        let a = subspace_angles(&w, &e2).unwrap()[0];
        assert!((a - (2.0 / s5).acos()).abs() < 1e-14);
        assert!((a - 0.46365).abs() < 1e-5);
    }

    #[test]
    fn row_mismatch_rejected() {
        let a = DenseMatrix::identity(2);
        let b = DenseMatrix::identity(3);
        assert!(subspace_angles(&a, &b).is_err());
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    proptest! {
        #[test]
        fn orthonormal_output(rows in 2usize..30, cols in 1usize..6, seed in 0u64..1000) {
            prop_assume!(cols <= rows);
            let q = orthonormalize(&random_matrix(rows, cols, seed)).unwrap();
            let gram = q.transpose().matmul(&q).unwrap();
            let err = gram.sub(&DenseMatrix::identity(cols)).unwrap().norm_max();
            prop_assert!(err <= 1e-12);
        }

        #[test]
        fn angles_are_symmetric(rows in 3usize..20, p in 1usize..4, q in 1usize..4, seed in 0u64..1000) {
            prop_assume!(p < rows && q < rows);
            let u = orthonormalize(&random_matrix(rows, p, seed)).unwrap();
            let v = orthonormalize(&random_matrix(rows, q, seed + 1)).unwrap();
            let a = subspace_angles(&u, &v).unwrap();
            let b = subspace_angles(&v, &u).unwrap();
            prop_assert_eq!(a.len(), p.min(q));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x >= 0.0 && *x <= FRAC_PI_2 + 1e-15);
            }
        }
    }
}
