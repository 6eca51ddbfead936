//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, TodaError};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn diag(v: &[C64]) -> CMat {
    CMat::from_diagonal(&CVec::from_column_slice(v))
}

pub fn diag_real(v: &[f64]) -> CMat {
    CMat::from_fn(v.len(), v.len(), |i, j| {
        if i == j {
            C64::new(v[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn inverse(m: &CMat, what: &str) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| TodaError::Singular(what.to_string()))
}

/// Solves `a x = b` via LU; fails on exact singularity only.
pub fn solve(a: &CMat, b: &CMat, what: &str) -> Result<CMat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| TodaError::Singular(what.to_string()))
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD.
pub fn lstsq(a: &CMat, b: &CVec) -> Result<CVec> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-14 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps)
        .map_err(|e| TodaError::Singular(format!("least squares: {e}")))
}

/// Ratio of extreme singular values.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

pub fn determinant(a: &CMat) -> C64 {
    a.clone().lu().determinant()
}

/// Eigenvalues of a general complex matrix from its Schur form, falling back
/// to the roots of the characteristic polynomial.
pub fn eigenvalues(a: &CMat) -> Result<Vec<C64>> {
    match a.clone().try_schur(f64::EPSILON, 10_000) {
        Some(schur) => {
            let (_, t) = schur.unpack();
            Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
        }
        // exceptional cases (e.g. permutation-like matrices) stall the QR sweep
        None => poly_roots(&char_poly(a)),
    }
}

/// Monic characteristic polynomial coefficients `[1, a_1, ..., a_N]` of
/// `det(mu I - a) = mu^N + a_1 mu^{N-1} + ... + a_N` (Faddeev-LeVerrier).
pub fn char_poly(a: &CMat) -> Vec<C64> {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let mut coeffs = vec![C64::new(1.0, 0.0)];
    let mut mk = CMat::zeros(n, n);
    for k in 1..=n {
        mk = a * &mk + &id * coeffs[k - 1];
        let am = a * &mk;
        let ck = -am.trace() / (k as f64);
        coeffs.push(ck);
    }
    coeffs
}

/// Coefficients `[1, -e_1, e_2, ...]` of `prod (mu - r_j)`, i.e. signed
/// elementary symmetric functions of the roots.
pub fn poly_from_roots(roots: &[C64]) -> Vec<C64> {
    let mut p = vec![C64::new(1.0, 0.0)];
    for &r in roots {
        let mut q = vec![C64::new(0.0, 0.0); p.len() + 1];
        for (i, &a) in p.iter().enumerate() {
            q[i] += a;
            q[i + 1] -= a * r;
        }
        p = q;
    }
    p
}

/// Elementary symmetric functions `e_0 = 1, e_1, ..., e_N` of the given values.
pub fn elementary_symmetric(values: &[C64]) -> Vec<C64> {
    poly_from_roots(values)
        .into_iter()
        .enumerate()
        .map(|(i, a)| if i % 2 == 0 { a } else { -a })
        .collect()
}

/// Roots of a polynomial `[a_0, a_1, ..., a_N]` (highest degree first) by the
/// Aberth-Ehrlich simultaneous iteration.
pub fn poly_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[0];
    if lead.norm() == 0.0 {
        return Err(TodaError::InvalidInput("leading coefficient is zero".into()));
    }
    let a: Vec<C64> = coeffs.iter().map(|x| x / lead).collect();
    // Cauchy bound for the initial circle
    let radius = 1.0 + a[1..].iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let radius = radius.min(2.0 * a[1..].iter().fold(0.0_f64, |m, z| m.max(z.norm().powf(1.0 / n as f64))) + 1e-3);
    let mut z: Vec<C64> = (0..n)
        .map(|k| C64::from_polar(radius.max(0.5), 2.0 * std::f64::consts::PI * (k as f64 + 0.37) / n as f64))
        .collect();
    let eval = |x: C64| {
        let (mut p, mut dp) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for &c in &a {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };
    for _ in 0..500 {
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let (p, dp) = eval(z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let mut sum = C64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    sum += C64::new(1.0, 0.0) / (z[i] - z[j]);
                }
            }
            let step = ratio / (C64::new(1.0, 0.0) - ratio * sum);
            if step.is_finite() {
                z[i] -= step;
                max_step = max_step.max(step.norm() / z[i].norm().max(1.0));
            }
        }
        if max_step < 1e-15 {
            return Ok(z);
        }
    }
    // accept if residuals are tiny even without step convergence
    let scale = a.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    if z.iter().all(|x| eval(*x).0.norm() <= 1e-10 * scale * x.norm().max(1.0).powi(n as i32)) {
        Ok(z)
    } else {
        Err(TodaError::NotConverged("polynomial roots".into()))
    }
}

pub fn matrix_power(a: &CMat, k: usize) -> CMat {
    let mut out = CMat::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

pub fn check_square(m: &CMat, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(TodaError::DimensionMismatch { expected: n, got: m.nrows() });
    }
    if m.ncols() != n {
        return Err(TodaError::DimensionMismatch { expected: n, got: m.ncols() });
    }
    Ok(())
}
