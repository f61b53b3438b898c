use num_complex::Complex64;

use super::{DenseMatrix, ABS_FLOOR};
use crate::error::{Error, Result};

/// Eigenvalues (descending modulus) with optional eigenvectors.
///
/// Right vectors satisfy `A v = λ v`; left vectors satisfy `Aᵀ w = λ w`,
/// i.e. they are the right vectors of the transpose. Both are unit length
/// with their largest-modulus component real and positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub right: Option<Vec<Vec<Complex64>>>,
    pub left: Option<Vec<Vec<Complex64>>>,
}

impl Spectrum {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |l| l.norm())
    }

    /// Number of eigenvalues with modulus at least `threshold`.
    pub fn count_at_least(&self, threshold: f64) -> usize {
        self.eigenvalues
            .iter()
            .filter(|l| l.norm() >= threshold)
            .count()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.norm()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenvectorRequest {
    None,
    Right,
    Left,
    Both,
}

/// Sort order shared by every spectrum: modulus, then real part, then
/// imaginary part, all descending.
pub(crate) fn spectral_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

pub fn dense_eigendecompose(m: &DenseMatrix, request: EigenvectorRequest) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite {
            what: "eigen input",
        });
    }
    let mut eigenvalues = hessenberg_qr_eigenvalues(m)?;
    eigenvalues.sort_by(spectral_order);

    let want_right = matches!(
        request,
        EigenvectorRequest::Right | EigenvectorRequest::Both
    );
    let want_left = matches!(request, EigenvectorRequest::Left | EigenvectorRequest::Both);
    let right = if want_right {
        Some(vectors_for_all(m, &eigenvalues)?)
    } else {
        None
    };
    let left = if want_left {
        Some(vectors_for_all(&m.transpose(), &eigenvalues)?)
    } else {
        None
    };
    Ok(Spectrum {
        eigenvalues,
        right,
        left,
    })
}

fn vectors_for_all(m: &DenseMatrix, eigenvalues: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(eigenvalues.len());
    // Repeated eigenvalues get different start vectors so that the returned
    // vectors differ where the eigenspace allows it.
    for (i, lambda) in eigenvalues.iter().enumerate() {
        if lambda.im < 0.0 && i > 0 && eigenvalues[i - 1] == lambda.conj() {
            let partner = out[i - 1].iter().map(|c| c.conj()).collect();
            out.push(partner);
            continue;
        }
        out.push(inverse_iteration(m, *lambda, i)?);
    }
    Ok(out)
}

/// Unit eigenvector of `m` for an (approximate) eigenvalue `lambda`.
pub fn eigenvector_for(m: &DenseMatrix, lambda: Complex64) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    inverse_iteration(m, lambda, 0)
}

fn inverse_iteration(m: &DenseMatrix, lambda: Complex64, salt: usize) -> Result<Vec<Complex64>> {
    let n = m.rows();
    let scale = m.norm_max().max(ABS_FLOOR);
    let shift = lambda + Complex64::new(scale * 1e-13, 0.0);
    let mut a: Vec<Complex64> = m
        .as_slice()
        .iter()
        .map(|v| Complex64::new(*v, 0.0))
        .collect();
    for i in 0..n {
        a[i * n + i] -= shift;
    }
    let lu = ComplexLu::new(a, n, scale * f64::EPSILON);

    let mut v: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = (i + 1) as f64 * 0.618_033_988_749_895 + salt as f64 * 0.414_213_562;
            Complex64::new(1.0 + (t.fract() - 0.5) * 0.5, 0.0)
        })
        .collect();
    for _ in 0..3 {
        v = lu.solve(&v);
        normalize(&mut v);
    }
    Ok(v)
}

fn normalize(v: &mut [Complex64]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let s = phase / norm;
    for c in v.iter_mut() {
        *c *= s;
    }
}

struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    /// Exactly singular pivots are replaced by `tiny`, which is what inverse
    /// iteration wants.
    fn new(mut lu: Vec<Complex64>, n: usize, tiny: f64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].norm().total_cmp(&lu[j * n + k].norm()))
                .unwrap_or(k);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            if lu[k * n + k].norm() < tiny {
                lu[k * n + k] = Complex64::new(tiny.max(f64::MIN_POSITIVE), 0.0);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let l = lu[i * n + k] / pivot;
                lu[i * n + k] = l;
                if l.re != 0.0 || l.im != 0.0 {
                    for j in k + 1..n {
                        let t = lu[k * n + j];
                        lu[i * n + j] -= l * t;
                    }
                }
            }
        }
        Self { n, lu, perm }
    }

    fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..i {
                s += self.lu[i * n + j] * x[j];
            }
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in i + 1..n {
                s += self.lu[i * n + j] * x[j];
            }
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

/// Householder reduction to upper Hessenberg form, in place on a row-major
/// `n x n` buffer.
fn reduce_to_hessenberg(a: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let alpha_norm: f64 = (k + 1..n).map(|i| a[i * n + k].powi(2)).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1) * n + k];
        let alpha = if x0 > 0.0 { -alpha_norm } else { alpha_norm };
        for i in k + 1..n {
            v[i] = a[i * n + k];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // left: A <- (I - beta v vᵀ) A on rows k+1.., columns k..
        for j in k..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[i * n + j]).sum();
            let s = s * beta;
            for i in k + 1..n {
                a[i * n + j] -= s * v[i];
            }
        }
        // right: A <- A (I - beta v vᵀ) on all rows, columns k+1..
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[i * n + j] * v[j]).sum();
            let s = s * beta;
            for j in k + 1..n {
                a[i * n + j] -= s * v[j];
            }
        }
        a[(k + 1) * n + k] = alpha;
        for i in k + 2..n {
            a[i * n + k] = 0.0;
        }
    }
}

const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

/// Eigenvalues of a general real matrix by Hessenberg reduction and the
/// Francis implicit double-shift QR iteration (EISPACK `hqr` layout).
fn hessenberg_qr_eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>> {
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = m.as_slice().to_vec();
    reduce_to_hessenberg(&mut h, n);

    // 1-based view keeps the classic index arithmetic readable.
    let dim = n + 1;
    let mut a = vec![0.0; dim * dim];
    for i in 0..n {
        for j in 0..n {
            a[(i + 1) * dim + (j + 1)] = h[i * n + j];
        }
    }
    let at = |i: usize, j: usize| i * dim + j;

    let mut wr = vec![0.0; dim];
    let mut wi = vec![0.0; dim];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[at(i, j)].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let mut total_sweeps = 0usize;
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[at(l - 1, l - 1)].abs() + a[at(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[at(l, l - 1)].abs() + s == s {
                    a[at(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[at(nn, nn)];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[at(nn - 1, nn - 1)];
            let mut w = a[at(nn, nn - 1)] * a[at(nn - 1, nn)];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != 0.0 {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = 0.0;
                    wi[nn] = 0.0;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = z;
                    wi[nn] = -z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if its == MAX_SWEEPS_PER_EIGENVALUE {
                return Err(Error::EigNoConvergence {
                    iterations: total_sweeps,
                });
            }
            if its > 0 && its.is_multiple_of(10) {
                // exceptional shift
                t += x;
                for i in 1..=nn {
                    a[at(i, i)] -= x;
                }
                let s = a[at(nn, nn - 1)].abs() + a[at(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_sweeps += 1;

            let (mut p, mut q, mut r, mut z);
            let mut mm = nn - 2;
            loop {
                z = a[at(mm, mm)];
                r = x - z;
                let s0 = y - z;
                p = (r * s0 - w) / a[at(mm + 1, mm)] + a[at(mm, mm + 1)];
                q = a[at(mm + 1, mm + 1)] - z - r - s0;
                r = a[at(mm + 2, mm + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if mm == l {
                    break;
                }
                let u = a[at(mm, mm - 1)].abs() * (q.abs() + r.abs());
                let v =
                    p.abs() * (a[at(mm - 1, mm - 1)].abs() + z.abs() + a[at(mm + 1, mm + 1)].abs());
                if u + v == v {
                    break;
                }
                mm -= 1;
            }
            for i in mm + 2..=nn {
                a[at(i, i - 2)] = 0.0;
                if i != mm + 2 {
                    a[at(i, i - 3)] = 0.0;
                }
            }
            let mut k = mm;
            while k < nn {
                if k != mm {
                    p = a[at(k, k - 1)];
                    q = a[at(k + 1, k - 1)];
                    r = 0.0;
                    if k != nn - 1 {
                        r = a[at(k + 2, k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == mm {
                        if l != mm {
                            a[at(k, k - 1)] = -a[at(k, k - 1)];
                        }
                    } else {
                        a[at(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[at(k, j)] + q * a[at(k + 1, j)];
                        if k != nn - 1 {
                            p += r * a[at(k + 2, j)];
                            a[at(k + 2, j)] -= p * z;
                        }
                        a[at(k + 1, j)] -= p * y;
                        a[at(k, j)] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[at(i, k)] + y * a[at(i, k + 1)];
                        if k != nn - 1 {
                            p += z * a[at(i, k + 2)];
                            a[at(i, k + 2)] -= p * r;
                        }
                        a[at(i, k + 1)] -= p * q;
                        a[at(i, k)] -= p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(eps: f64) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[0.9, 0.0], &[eps, 1.1]])
    }

    fn residual(m: &DenseMatrix, lambda: Complex64, v: &[Complex64]) -> f64 {
        let n = m.rows();
        (0..n)
            .map(|i| {
                let av: Complex64 = (0..n).map(|j| v[j] * m[(i, j)]).sum();
                (av - lambda * v[i]).norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let s = dense_eigendecompose(&DenseMatrix::identity(2), EigenvectorRequest::Right).unwrap();
        for l in &s.eigenvalues {
            assert!((l - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn toy_spectrum_and_left_vector() {
        let a = toy(0.1);
        let s = dense_eigendecompose(&a, EigenvectorRequest::Both).unwrap();
        assert!((s.eigenvalues[0].re - 1.1).abs() < 1e-14);
        assert!((s.eigenvalues[1].re - 0.9).abs() < 1e-14);
        let w = &s.left.as_ref().unwrap()[0];
        // wᵀ(A - 1.1 I) = 0  =>  w ∝ (1, 2)
        assert!((w[1].re / w[0].re - 2.0).abs() < 1e-12);
        for (k, l) in s.eigenvalues.iter().enumerate() {
            let v = &s.right.as_ref().unwrap()[k];
            assert!(residual(&a, *l, v) <= 1e-10 * a.norm_fro());
        }
    }

    #[test]
    fn rotation_gives_conjugate_pair() {
        let (c, sn) = (0.3f64.cos() * 1.2, 0.3f64.sin() * 1.2);
        let a = DenseMatrix::from_rows(&[&[c, -sn, 0.0], &[sn, c, 0.0], &[0.0, 0.0, 0.5]]);
        let s = dense_eigendecompose(&a, EigenvectorRequest::Right).unwrap();
        assert_eq!(s.eigenvalues[0], s.eigenvalues[1].conj());
        assert!(s.eigenvalues[0].im > 0.0);
        assert!((s.eigenvalues[0].norm() - 1.2).abs() < 1e-13);
        for (k, l) in s.eigenvalues.iter().enumerate() {
            assert!(residual(&a, *l, &s.right.as_ref().unwrap()[k]) < 1e-12);
        }
    }

    #[test]
    fn random_trace_and_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DenseMatrix::from_fn(20, 20, |_, _| rng.random_range(-1.0..1.0));
            let s = dense_eigendecompose(&a, EigenvectorRequest::Right).unwrap();
            let trace: f64 = (0..20).map(|i| a[(i, i)]).sum();
            let sum: Complex64 = s.eigenvalues.iter().sum();
            assert!((sum.re - trace).abs() <= 1e-8 * trace.abs().max(1.0));
            assert!(sum.im.abs() < 1e-10);
            for w in s.eigenvalues.windows(2) {
                assert!(w[0].norm() >= w[1].norm());
            }
            for (k, l) in s.eigenvalues.iter().enumerate() {
                assert!(residual(&a, *l, &s.right.as_ref().unwrap()[k]) <= 1e-10 * a.norm_fro());
            }
        }
    }

    #[test]
    fn non_square_rejected() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            dense_eigendecompose(&a, EigenvectorRequest::None),
            Err(Error::NonSquare { .. })
        ));
    }
}
