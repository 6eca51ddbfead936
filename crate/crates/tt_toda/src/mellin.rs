//! The Mellin-Barnes function
//!
//! `g(zeta) = int_{c - i inf}^{c + i inf} prod_j Gamma(u_j - t) ((n+1) zeta)^{-(n+1) t} dt`,
//! `u_j = (b_j + j)/(n+1)`,
//!
//! evaluated by trapezoid quadrature on a vertical line or by its residue
//! series, together with the rotation `b -> (b_1, .., b_n, b_0)` and the exact
//! solution matrix of the normalized equation built from rotated copies.
//!
//! Points are passed as a continued logarithm `lz = log zeta` so that arguments
//! beyond `(-pi, pi]` are handled without a branch jump.

use std::f64::consts::PI;

use serde::Serialize;

use crate::algebra::Rank;
use crate::error::{Result, TodaError};
use crate::linalg::{c, CMat, C64, I};
use crate::special::{cln_gamma, gamma};
use crate::spectral::AsymptoticData;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MellinParams {
    pub rank: Rank,
    pub b: Vec<f64>,
}

impl MellinParams {
    pub fn new(rank: Rank, b: Vec<f64>) -> Result<Self> {
        if b.len() != rank.np1() {
            return Err(TodaError::DimensionMismatch { expected: rank.np1(), got: b.len() });
        }
        Ok(MellinParams { rank, b })
    }

    /// Parameters `b = -m` used for the normalized equation.
    pub fn from_m(rank: Rank, m: &[f64]) -> Result<Self> {
        MellinParams::new(rank, m.iter().map(|x| -x).collect())
    }

    /// Pole positions `u_j = (b_j + j)/(n+1)`.
    pub fn u(&self) -> Vec<f64> {
        let n1 = self.b.len() as f64;
        self.b.iter().enumerate().map(|(j, b)| (b + j as f64) / n1).collect()
    }

    pub fn u_min(&self) -> f64 {
        self.u().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `g^[1]`: parameters `(b_1, ..., b_n, b_0)`.
    pub fn shifted(&self) -> Self {
        let mut b = self.b.clone();
        b.rotate_left(1);
        MellinParams { rank: self.rank, b }
    }

    pub fn shifted_by(&self, k: usize) -> Self {
        let mut b = self.b.clone();
        let n1 = b.len();
        b.rotate_left(k % n1);
        MellinParams { rank: self.rank, b }
    }

    /// Residue-series condition `0 < |u_i - u_j| < 1` for `i != j`.
    pub fn check_residue_condition(&self) -> Result<()> {
        let u = self.u();
        for i in 0..u.len() {
            for j in 0..i {
                let d = (u[i] - u[j]).abs();
                if !(d > 1e-12 && d < 1.0 - 1e-12) {
                    return Err(TodaError::InvalidInput(format!(
                        "residue condition violated for pair ({j},{i}): |u_i - u_j| = {d}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sum_b(&self) -> f64 {
        self.b.iter().sum()
    }
}

fn log_integrand(u: &[f64], n1: f64, t: C64, log_nz: C64) -> Result<C64> {
    let mut acc = -n1 * t * log_nz;
    for &uj in u {
        acc += cln_gamma(c(uj, 0.0) - t)?;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureOptions {
    pub tol: f64,
    /// Contour abscissa; chosen automatically near the saddle when `None`.
    pub abscissa: Option<f64>,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { tol: 1e-12, abscissa: None }
    }
}

/// Default abscissa: near the real saddle `u - t ~ 1/((n+1)|zeta|)` but at least
/// a quarter unit left of the first pole, which limits cancellation.
pub fn default_abscissa(params: &MellinParams, lz: C64) -> f64 {
    let n1 = params.b.len() as f64;
    let r = lz.re.exp();
    params.u_min() - (0.25_f64).max(1.0 / (n1 * r))
}

/// Vertical-line trapezoid quadrature; valid for `|arg zeta| < pi/2`.
pub fn g_quadrature(params: &MellinParams, lz: C64, opts: QuadratureOptions) -> Result<C64> {
    let phi = lz.im;
    if phi.abs() >= PI / 2.0 - 1e-3 {
        return Err(TodaError::Domain(format!("|arg zeta| = {} outside the quadrature sector", phi.abs())));
    }
    let u = params.u();
    let n1 = u.len() as f64;
    let cabs = opts.abscissa.unwrap_or_else(|| default_abscissa(params, lz));
    if cabs >= params.u_min() {
        return Err(TodaError::InvalidInput(format!("abscissa {cabs} not left of all poles")));
    }
    let log_nz = c(n1.ln(), 0.0) + lz;
    let f = |y: f64| -> Result<C64> { log_integrand(&u, n1, c(cabs, y), log_nz) };

    // peak location and magnitude on a coarse scan
    let decay = n1 * (PI / 2.0 - phi.abs());
    let ymax_guess = 80.0 / decay + 10.0;
    let mut peak = f64::NEG_INFINITY;
    let mut y = -ymax_guess;
    while y <= ymax_guess {
        peak = peak.max(f(y)?.re);
        y += ymax_guess / 200.0;
    }
    let cutoff = peak + opts.tol.ln() - 6.0;

    // returns the quadrature value and the L1 mass used as a rounding floor
    let trapezoid = |h: f64| -> Result<(C64, f64)> {
        let mut sum = f(0.0)?.exp();
        let mut mass = sum.norm();
        for dir in [1.0, -1.0] {
            let mut k = 1;
            loop {
                let lv = f(dir * k as f64 * h)?;
                sum += lv.exp();
                mass += lv.re.exp();
                if lv.re < cutoff && k as f64 * h > 1.0 {
                    break;
                }
                k += 1;
                if k > 2_000_000 {
                    return Err(TodaError::NotConverged("quadrature tail".into()));
                }
            }
        }
        Ok((sum * h * I, mass * h))
    };
    let dist = params.u_min() - cabs;
    let mut h = (2.0 * PI * dist / (-opts.tol.ln() + 4.0)).min(0.5);
    let (mut prev, _) = trapezoid(h)?;
    for _ in 0..12 {
        h /= 2.0;
        let (next, mass) = trapezoid(h)?;
        if (next - prev).norm() <= opts.tol * next.norm() + 1e3 * f64::EPSILON * mass {
            return Ok(next);
        }
        prev = next;
    }
    Err(TodaError::NotConverged("quadrature step refinement".into()))
}

/// Residue series `2 pi i sum_i sum_k (-1)^k/k! prod_{j != i} Gamma(u_j - u_i - k) ((n+1) zeta)^{-(n+1)(u_i + k)}`.
pub fn g_residue_series(params: &MellinParams, lz: C64) -> Result<C64> {
    Ok(residue_groups(params, lz)?.iter().sum())
}

/// The `n+1` exponent groups of the residue series (group `i` carries `zeta^{-(b_i + i)}`).
pub fn residue_groups(params: &MellinParams, lz: C64) -> Result<Vec<C64>> {
    params.check_residue_condition()?;
    let u = params.u();
    let n1 = u.len();
    let n1f = n1 as f64;
    let log_nz = c(n1f.ln(), 0.0) + lz;
    let step = (-n1f * log_nz).exp();
    let mut out = Vec::with_capacity(n1);
    for i in 0..n1 {
        let mut coef = 2.0 * PI;
        for j in 0..n1 {
            if j != i {
                coef *= gamma(u[j] - u[i])?;
            }
        }
        let mut term = I * coef * (-n1f * u[i] * log_nz).exp();
        let mut sum = term;
        let mut small = 0;
        for k in 1..2000 {
            let kf = k as f64;
            let mut factor = -1.0 / kf;
            for j in 0..n1 {
                if j != i {
                    factor /= u[j] - u[i] - kf;
                }
            }
            term *= step * factor;
            sum += term;
            if term.norm() <= 1e-18 * sum.norm() {
                small += 1;
                if small >= 3 {
                    break;
                }
            } else {
                small = 0;
            }
        }
        out.push(sum);
    }
    Ok(out)
}

/// Leading coefficient `C_0` of the group carrying `zeta^{-b_0}`.
pub fn leading_coefficient(params: &MellinParams) -> Result<C64> {
    let u = params.u();
    let mut coef = 2.0 * PI * (u.len() as f64).powf(-params.b[0]);
    for j in 1..u.len() {
        coef *= gamma(u[j] - u[0])?;
    }
    Ok(I * coef)
}

/// Leading Laplace asymptotic as `zeta -> 0`.
pub fn g_laplace(params: &MellinParams, lz: C64) -> C64 {
    let n1 = params.b.len() as f64;
    let sb = params.sum_b();
    let lead = I * (2.0 * PI).powf((n1 + 1.0) / 2.0) * n1.powf(-0.5 - sb / n1);
    lead * (-(sb / n1) * lz - (-lz).exp()).exp()
}

#[derive(Clone, Copy, Debug)]
pub struct EvalPolicy {
    /// `|zeta|` above which the residue series is used inside the quadrature sector.
    pub series_radius: f64,
    pub quad: QuadratureOptions,
}

impl EvalPolicy {
    pub fn for_rank(rank: Rank) -> Self {
        EvalPolicy { series_radius: 2.0 * rank.np1() as f64, quad: QuadratureOptions::default() }
    }
}

/// Quadrature inside `|arg zeta| < pi/2 - 0.05` below the series radius, series elsewhere.
pub fn g_eval(params: &MellinParams, lz: C64, policy: &EvalPolicy) -> Result<C64> {
    let r = lz.re.exp();
    if lz.im.abs() < PI / 2.0 - 0.05 && r < policy.series_radius {
        g_quadrature(params, lz, policy.quad)
    } else {
        g_residue_series(params, lz)
    }
}

/// Argument `pi (1 - 2j/(n+1))` of the rotation attached to column `j`.
pub fn column_angle(j: usize, rank: Rank) -> f64 {
    PI * (1.0 - 2.0 * j as f64 / rank.np1() as f64)
}

/// Exact solution of the normalized equation:
/// entry `(k, j) = (-1)^k a_j^{-k} g^[k](a_j zeta)`, `arg a_j = pi(1 - 2j/(n+1))`.
pub fn exact_solution_matrix(data: &AsymptoticData, lz: C64, policy: &EvalPolicy) -> Result<CMat> {
    let rank = data.rank;
    let n1 = rank.np1();
    let base = MellinParams::from_m(rank, &data.m)?;
    let mut x = CMat::zeros(n1, n1);
    for k in 0..n1 {
        let pk = base.shifted_by(k);
        for j in 0..n1 {
            let ang = column_angle(j, rank);
            let val = g_eval(&pk, lz + c(0.0, ang), policy)?;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            x[(k, j)] = val * sign * C64::from_polar(1.0, -(k as f64) * ang);
        }
    }
    Ok(x)
}

/// `lim zeta^{-m} X(zeta)` assembled from the leading residue coefficients of the
/// rotated functions.
pub fn b_inverse_from_series(data: &AsymptoticData) -> Result<CMat> {
    let rank = data.rank;
    let n1 = rank.np1();
    let base = MellinParams::from_m(rank, &data.m)?;
    let mut out = CMat::zeros(n1, n1);
    for k in 0..n1 {
        let c0 = leading_coefficient(&base.shifted_by(k))?;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..n1 {
            let ang = column_angle(j, rank);
            out[(k, j)] = c0 * sign * C64::from_polar(1.0, ang * (data.m[k] - k as f64));
        }
    }
    Ok(out)
}

/// Fourth-order central difference of `f` along the direction of `zeta`,
/// returning `zeta f'(zeta)`.
pub fn euler_derivative<F>(f: F, lz: C64, rel_step: f64) -> Result<C64>
where
    F: Fn(C64) -> Result<C64>,
{
    // derivative in log-coordinate: zeta d/dzeta = d/d(log zeta)
    let h = rel_step;
    let f1 = f(lz + h)?;
    let f_1 = f(lz - h)?;
    let f2 = f(lz + 2.0 * h)?;
    let f_2 = f(lz - 2.0 * h)?;
    Ok((f_2 - f2 + 8.0 * (f1 - f_1)) / (12.0 * h))
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftCheck {
    /// `max_k |zeta (zeta g^[k]' + b_k g^[k]) - g^[k+1]| / |g^[k+1]|`.
    pub max_shift_residual: f64,
    /// Residual of the full scalar equation after `n+1` steps, relative to `|g|`.
    pub scalar_residual: f64,
}

/// Applies the first-order factors `zeta(zeta d/dzeta + b_k)` numerically, one at a
/// time, comparing with the rotated functions; after `n+1` factors the chain
/// must return to `g` (the scalar equation).
pub fn shift_chain_check(params: &MellinParams, lz: C64, policy: &EvalPolicy) -> Result<ShiftCheck> {
    let n1 = params.b.len();
    let mut max_shift: f64 = 0.0;
    let g0 = g_eval(params, lz, policy)?;
    let mut current = params.clone();
    let mut applied = g0;
    for k in 0..n1 {
        let bk = params.b[k];
        let cur = current.clone();
        let deriv = euler_derivative(|z| g_eval(&cur, z, policy), lz, 1e-3)?;
        let val = g_eval(&cur, lz, policy)?;
        let lhs = lz.exp() * (deriv + bk * val);
        let next = current.shifted();
        let want = g_eval(&next, lz, policy)?;
        max_shift = max_shift.max((lhs - want).norm() / want.norm());
        // carry the chain forward through the evaluated rotated function
        applied = lhs;
        current = next;
    }
    let scalar_residual = (applied - g0).norm() / g0.norm();
    Ok(ShiftCheck { max_shift_residual: max_shift, scalar_residual })
}

/// Residual of the normalized equation `X' = (-Pi/zeta^2 + m/zeta) X` for the exact
/// solution matrix, relative to `|X|`.
pub fn exact_solution_residual(data: &AsymptoticData, lz: C64, policy: &EvalPolicy) -> Result<f64> {
    let st = crate::algebra::StructureMatrices::new(data.rank);
    let n1 = data.rank.np1();
    let x = exact_solution_matrix(data, lz, policy)?;
    let h = 1e-3;
    let xp = exact_solution_matrix(data, lz + h, policy)?;
    let xm = exact_solution_matrix(data, lz - h, policy)?;
    let xp2 = exact_solution_matrix(data, lz + 2.0 * h, policy)?;
    let xm2 = exact_solution_matrix(data, lz - 2.0 * h, policy)?;
    // zeta X' in log coordinates
    let zx = (xm2 - xp2 + (xp - xm) * c(8.0, 0.0)) / c(12.0 * h, 0.0);
    let zeta = lz.exp();
    let m = CMat::from_fn(n1, n1, |i, j| if i == j { c(data.m[i], 0.0) } else { c(0.0, 0.0) });
    let rhs = (-(&st.pi) / zeta + m) * &x;
    let diff = crate::linalg::max_abs_diff(&zx, &rhs);
    Ok(diff / crate::linalg::max_abs(&x))
}

/// Cauchy-Riemann residual `|f_x + i f_y|` relative to `|f_x|` by central differences.
pub fn holomorphy_residual(params: &MellinParams, zeta: C64, policy: &EvalPolicy) -> Result<f64> {
    let h = 1e-3 * zeta.norm();
    let g = |z: C64| g_eval(params, z.ln(), policy);
    let fx = (g(zeta + h)? - g(zeta - h)?) / (2.0 * h);
    let fy = (g(zeta + I * h)? - g(zeta - I * h)?) / (2.0 * h);
    Ok((fx + I * fy).norm() / fx.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2(b0: f64) -> MellinParams {
        MellinParams::new(Rank::new(2).unwrap(), vec![b0, -b0]).unwrap()
    }

    #[test]
    fn series_matches_quadrature_on_real_axis() {
        let p = p2(-1.0 / 6.0);
        for &z in &[0.5, 1.0, 3.0, 5.0] {
            let lz = c(f64::ln(z), 0.0);
            let q = g_quadrature(&p, lz, QuadratureOptions::default()).unwrap();
            let s = g_residue_series(&p, lz).unwrap();
            assert!((q - s).norm() <= 1e-10 * s.norm().max(1e-300), "z={z}: {q} vs {s}");
        }
    }

    #[test]
    fn abscissa_independence() {
        let p = p2(0.1);
        let lz = c(0.3_f64.ln(), 0.2);
        let a = g_quadrature(&p, lz, QuadratureOptions { tol: 1e-12, abscissa: Some(p.u_min() - 0.7) }).unwrap();
        let b = g_quadrature(&p, lz, QuadratureOptions { tol: 1e-12, abscissa: Some(p.u_min() - 3.0) }).unwrap();
        assert!((a - b).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn laplace_band() {
        let p = p2(-1.0 / 6.0);
        for (z, band) in [(0.05, 0.15), (0.01, 0.03)] {
            let lz = c(f64::ln(z), 0.0);
            let r = g_quadrature(&p, lz, QuadratureOptions::default()).unwrap() / g_laplace(&p, lz);
            assert!((r - 1.0).norm() < band, "z={z}: ratio {r}");
        }
    }

    #[test]
    fn leading_coefficient_matches_group_limit() {
        let p = MellinParams::new(Rank::new(3).unwrap(), vec![-0.2, 0.0, 0.2]).unwrap();
        let z = 1.0e5_f64;
        let groups = residue_groups(&p, c(z.ln(), 0.0)).unwrap();
        let lim = groups[0] * z.powf(p.b[0]);
        let c0 = leading_coefficient(&p).unwrap();
        assert!((lim - c0).norm() < 1e-12 * c0.norm(), "{lim} vs {c0}");
    }

    #[test]
    fn rotation_is_a_permutation() {
        let p = MellinParams::new(Rank::new(4).unwrap(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(p.shifted().b, vec![0.2, 0.3, 0.4, 0.1]);
        assert_eq!(p.shifted_by(4), p);
    }

    fn sample_data(n1: usize) -> AsymptoticData {
        let half = n1 / 2;
        let mut m = vec![0.0; n1];
        let mut acc = 0.0;
        for i in (0..half).rev() {
            acc += 0.13 + 0.21 * ((i * 5 + n1) % 3) as f64 / n1 as f64;
            m[i] = acc;
            m[n1 - 1 - i] = -acc;
        }
        AsymptoticData::from_m(Rank::new(n1).unwrap(), &m, None).unwrap()
    }

    #[test]
    fn b_inverse_matches_closed_form() {
        for n1 in 2..=6 {
            let data = sample_data(n1);
            let got = b_inverse_from_series(&data).unwrap();
            let gm = crate::spectral::gamma_m(&data).unwrap();
            let want = crate::linalg::diag(&gm) * crate::spectral::v_m(&data);
            let err = crate::linalg::max_abs_diff(&got, &want) / crate::linalg::max_abs(&want);
            assert!(err < 1e-12, "n+1={n1}: {err}");
        }
    }

    #[test]
    fn exact_matrix_solves_normalized_equation() {
        for n1 in 2..=5 {
            let data = sample_data(n1);
            let policy = EvalPolicy::for_rank(data.rank);
            for &(r, phi) in &[(1.5, 0.0), (0.7, 0.3), (6.0, -0.2)] {
                let res = exact_solution_residual(&data, c(f64::ln(r), phi), &policy).unwrap();
                assert!(res < 1e-7, "n+1={n1} r={r}: {res}");
            }
        }
    }

    #[test]
    fn shift_chain_closes() {
        let data = sample_data(4);
        let p = MellinParams::from_m(data.rank, &data.m).unwrap();
        let policy = EvalPolicy::for_rank(data.rank);
        let chk = shift_chain_check(&p, c(0.0, 0.1), &policy).unwrap();
        assert!(chk.max_shift_residual < 1e-8, "{chk:?}");
        assert!(chk.scalar_residual < 1e-8, "{chk:?}");
    }

    #[test]
    fn holomorphic_in_sector() {
        let p = p2(-0.2);
        let policy = EvalPolicy::for_rank(p.rank);
        let r = holomorphy_residual(&p, c(0.8, 0.4), &policy).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn overlap_grid_agrees() {
        for (n1, b) in [(2, vec![0.0, 0.0]), (2, vec![-1.0 / 6.0, 1.0 / 6.0]), (3, vec![-0.3, 0.0, 0.3])] {
            let p = MellinParams::new(Rank::new(n1).unwrap(), b).unwrap();
            for &r in &[2.0, 5.0, 8.0] {
                for &phi in &[0.0, PI / 4.0, -PI / 4.0] {
                    let lz = c(f64::ln(r), phi);
                    let q = g_quadrature(&p, lz, QuadratureOptions::default()).unwrap();
                    let s = g_residue_series(&p, lz).unwrap();
                    assert!((q - s).norm() <= 1e-9 * s.norm(), "n+1={n1} r={r} phi={phi}");
                }
            }
        }
    }
}
