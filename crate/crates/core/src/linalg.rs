//! Small dense linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivot magnitude below which a leading minor is treated as zero.
const PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive semi-definite
/// matrix.
///
/// Zero pivots are accepted (the factor then has a zero column) provided the
/// remainder of that column is also zero; otherwise the matrix cannot be PSD.
/// The error names the 1-based order of the first failing leading minor.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim(format!("cholesky needs a square matrix, got {}x{}", n, a.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d < -PIVOT_TOL {
            return Err(Error::Factorization { minor: j + 1, pivot: d });
        }
        if d <= PIVOT_TOL {
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-9 {
                    return Err(Error::Factorization { minor: j + 2, pivot: d });
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular("LU factorisation found a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(x)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Markov("matrix square root iteration hit a singular iterate".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Markov("matrix square root iteration hit a singular iterate".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = norm1(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * norm1(&y).max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::Markov("matrix square root did not converge".into()))
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Repeated square roots bring the argument within 0.25 of the identity in the
/// 1-norm, where the series for `log(I + X)` converges quickly; the result is
/// scaled back by `2^k`.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut k = 0u32;
    while norm1(&(&m - &id)) > 0.25 {
        if k >= 60 {
            return Err(Error::Markov("matrix logarithm: scaling did not converge".into()));
        }
        m = sqrtm(&m)?;
        k += 1;
    }
    let x = &m - &id;
    let mut term = x.clone();
    let mut sum = x.clone();
    for j in 2..200 {
        term = &term * &x;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        let contrib = &term * (sign / j as f64);
        sum += &contrib;
        if norm1(&contrib) < 1e-18 {
            break;
        }
    }
    let out = sum * 2f64.powi(k as i32);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Markov("matrix logarithm is not finite".into()));
    }
    Ok(out)
}

pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}
