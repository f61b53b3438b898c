use super::{norm_inf, DenseMatrix, ABS_FLOOR};
use crate::error::{check_len, Error, Result};

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    norm_max: f64,
}

impl LuFactor {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NonSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        let n = m.rows();
        let norm_max = m.norm_max();
        let tol = (n as f64 * f64::EPSILON * norm_max).max(ABS_FLOOR);
        let mut lu = m.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let (p, pval) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pval <= tol {
                let condition = if pval > 0.0 {
                    max_pivot.max(norm_max) / pval
                } else {
                    f64::INFINITY
                };
                return Err(Error::SingularSystem { condition });
            }
            max_pivot = max_pivot.max(pval);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let l = lu[i * n + k] / pivot;
                lu[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= l * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            norm_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Crude condition estimate from the pivot ratio.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        let (lo, hi) = (0..n)
            .map(|k| self.lu[k * n + k].abs())
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        hi.max(self.norm_max) / lo
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("lu rhs", self.n, rhs.len())?;
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        Ok(x)
    }

    /// Solves `Aᵀ x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("lu rhs", self.n, rhs.len())?;
        let n = self.n;
        // Uᵀ w = rhs
        let mut w = rhs.to_vec();
        for j in 0..n {
            let wj = w[j] / self.lu[j * n + j];
            w[j] = wj;
            for i in j + 1..n {
                w[i] -= self.lu[j * n + i] * wj;
            }
        }
        // Lᵀ y = w
        for j in (0..n).rev() {
            let yj = w[j];
            for i in 0..j {
                w[i] -= self.lu[j * n + i] * yj;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        Ok(x)
    }
}

/// LU without pivoting restricted to a band; used for the diagonally dominant
/// or triangular implicit operators of the IMEX steppers.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    band: Vec<f64>,
}

impl BandedLu {
    /// Returns `None` when a pivot is too small to proceed without pivoting.
    pub fn new(m: &DenseMatrix, lower: usize, upper: usize) -> Option<Self> {
        let n = m.rows();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let lo = i.saturating_sub(lower);
            let hi = (i + upper).min(n - 1);
            for j in lo..=hi {
                band[i * width + j + lower - i] = m[(i, j)];
            }
        }
        let scale = m.norm_max().max(ABS_FLOOR);
        let at = |i: usize, j: usize| i * width + j + lower - i;
        for k in 0..n {
            let pivot = band[at(k, k)];
            if pivot.abs() < 1e-8 * scale {
                return None;
            }
            for i in k + 1..=(k + lower).min(n - 1) {
                let l = band[at(i, k)] / pivot;
                band[at(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=(k + upper).min(n - 1) {
                        band[at(i, j)] -= l * band[at(k, j)];
                    }
                }
            }
        }
        Some(Self {
            n,
            lower,
            upper,
            width,
            band,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width + j + self.lower - i]
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("banded rhs", self.n, rhs.len())?;
        let n = self.n;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.lower);
            let mut s = 0.0;
            for j in lo..i {
                s += self.at(i, j) * x[j];
            }
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.upper).min(n - 1);
            let mut s = 0.0;
            for j in i + 1..=hi {
                s += self.at(i, j) * x[j];
            }
            x[i] = (x[i] - s) / self.at(i, i);
        }
        Ok(x)
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len("banded rhs", self.n, rhs.len())?;
        let n = self.n;
        let mut w = rhs.to_vec();
        for j in 0..n {
            let lo = j.saturating_sub(self.upper);
            let mut s = 0.0;
            for i in lo..j {
                s += self.at(i, j) * w[i];
            }
            w[j] = (w[j] - s) / self.at(j, j);
        }
        for j in (0..n).rev() {
            let hi = (j + self.lower).min(n - 1);
            let mut s = 0.0;
            for i in j + 1..=hi {
                s += self.at(i, j) * w[i];
            }
            w[j] -= s;
        }
        Ok(w)
    }
}

/// A factored square matrix, banded when that is cheaper and safe.
#[derive(Debug, Clone)]
pub enum Factorization {
    Dense(LuFactor),
    Banded(BandedLu),
}

impl Factorization {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NonSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        let n = m.rows();
        let (mut lower, mut upper) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    if i > j {
                        lower = lower.max(i - j);
                    } else {
                        upper = upper.max(j - i);
                    }
                }
            }
        }
        if 2 * (lower + upper + 1) < n {
            if let Some(b) = BandedLu::new(m, lower, upper) {
                return Ok(Factorization::Banded(b));
            }
        }
        Ok(Factorization::Dense(LuFactor::new(m)?))
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factorization::Dense(f) => f.solve(rhs),
            Factorization::Banded(f) => f.solve(rhs),
        }
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factorization::Dense(f) => f.solve_transpose(rhs),
            Factorization::Banded(f) => f.solve_transpose(rhs),
        }
    }
}

/// Solves `m · x = rhs` with partial pivoting and one step of iterative
/// refinement.
pub fn solve_linear(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    check_len("solve_linear rhs", m.rows(), rhs.len())?;
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "rhs" });
    }
    let lu = LuFactor::new(m)?;
    let mut x = lu.solve(rhs)?;
    let r: Vec<f64> = m
        .matvec(&x)?
        .iter()
        .zip(rhs)
        .map(|(ax, b)| b - ax)
        .collect();
    if norm_inf(&r) > 0.0 {
        let dx = lu.solve(&r)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    Ok(x)
}
