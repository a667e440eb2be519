//! Scalar helpers routed through `libm` so results do not depend on the
//! platform libm, plus small dense linear-algebra utilities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const PI: f64 = core::f64::consts::PI;
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln n!`
pub fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// `ln C(n, k)`
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `x^w` with the convention `0^w = 0` for `w > 0` and `x^0 = 1`.
pub fn pow_weight(x: f64, w: f64) -> f64 {
    if w == 0.0 {
        1.0
    } else if x <= 0.0 {
        0.0
    } else {
        powf(x, w)
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * floor((a + PI) / two_pi);
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Numerically stable `ln(sum(exp(v)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(v.iter().map(|x| exp(x - m)).sum::<f64>())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Lower Cholesky factorisation. On failure retries once with `1e-12 * trace * I` added.
pub fn cholesky(p: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if p.nrows() != p.ncols() {
        return Err(Error::Dimension("square matrix expected"));
    }
    if let Some(c) = Cholesky::new(p.clone()) {
        return Ok(c);
    }
    let tr = p.trace();
    if !(tr.is_finite() && tr > 0.0) {
        return Err(Error::NonInvertibleCovariance);
    }
    let n = p.nrows();
    let jittered = p + DMatrix::<f64>::identity(n, n) * (1e-12 * tr);
    Cholesky::new(jittered).ok_or(Error::NonInvertibleCovariance)
}

pub fn spd_inverse(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(p)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn log_det_from_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| ln(l[(i, i)])).sum::<f64>()
}

pub fn log_det_spd(p: &DMatrix<f64>) -> Result<f64> {
    Ok(log_det_from_chol(&cholesky(p)?))
}

/// `ln N(d; 0, S)`.
pub fn log_normal_zero_mean(d: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    if d.len() != s.nrows() {
        return Err(Error::Dimension("residual vs covariance"));
    }
    let c = cholesky(s)?;
    let sol = c.solve(d);
    let maha = d.dot(&sol);
    Ok(-0.5 * (d.len() as f64 * LN_2PI + log_det_from_chol(&c) + maha))
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Golub-Welsch nodes and weights from a symmetric tridiagonal Jacobi matrix.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    let n = diag.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = j.symmetric_eigen();
    let mut pairs: alloc::vec::Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)] * eig.eigenvectors[(0, k)])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss-Legendre rule on `[a, b]`: `sum w_k g(x_k) ~ int_a^b g`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    let off: alloc::vec::Vec<f64> = (1..n).map(|k| k as f64 / sqrt(4.0 * (k * k) as f64 - 1.0)).collect();
    let (x, w) = golub_welsch(&alloc::vec![0.0; n], &off, 2.0);
    let (h, c) = (0.5 * (b - a), 0.5 * (a + b));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Gauss-Hermite rule adapted to `N(mean, sd^2)`, returned as an unweighted rule:
/// `sum w_k g(x_k) ~ int g`, exact when `g` is that Gaussian times a low-degree polynomial.
pub fn gauss_hermite(n: usize, mean: f64, sd: f64) -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    let off: alloc::vec::Vec<f64> = (1..n).map(|k| sqrt(k as f64)).collect();
    let (z, w) = golub_welsch(&alloc::vec![0.0; n], &off, 1.0);
    let x = z.iter().map(|t| mean + sd * t).collect();
    let w = z.iter().zip(&w).map(|(t, v)| v * sd * sqrt(2.0 * PI) * exp(0.5 * t * t)).collect();
    (x, w)
}
