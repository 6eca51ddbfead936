//! Jump data of the Riemann-Hilbert problem at large `x`: the contour, the
//! explicit jump matrices on its rays, the `Z`-matrix bookkeeping between
//! opposite sectors, and the first-order reconstruction of `w` from the jumps.
//! The singular integral equation itself is not solved.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{Rank, StructureMatrices};
use crate::asymptotics::{decay_rate, extend_antisymmetric, log_near_identity, w_from_modes};
use crate::error::{Result, TodaError};
use crate::linalg::{c, diag, inverse, max_abs_diff, CMat, C64};
use crate::spectral::{build_qtilde, ray_support, stokes_factor_inf, stokes_factor_zero, RayIndex, StokesData};

/// Smallest `x` accepted by [`first_order_reconstruction`].
pub const RECONSTRUCTION_MIN_X: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RayKind {
    Zero,
    Infinity,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContourRay {
    pub kind: RayKind,
    pub index: RayIndex,
    /// Direction in the reference interval `[theta_ref, theta_ref + 2 pi)`.
    pub angle: f64,
}

/// The `2N` singular directions of each kind plus the circle `|zeta| = x^2`.
/// Rays are oriented from `0` to `infinity`; the jump rule is
/// `Psi_left = Psi_right * jump`.
#[derive(Clone, Debug, Serialize)]
pub struct ContourSpec {
    pub rank: Rank,
    pub x: f64,
    pub reference_start: f64,
    pub zero_rays: Vec<ContourRay>,
    pub infinity_rays: Vec<ContourRay>,
    pub circle_radius: f64,
}

fn reduce(angle: f64, start: f64) -> f64 {
    let mut a = (angle - start).rem_euclid(2.0 * PI) + start;
    if a >= start + 2.0 * PI - 1e-12 {
        a -= 2.0 * PI;
    }
    a
}

impl ContourSpec {
    pub fn new(rank: Rank, x: f64) -> Result<Self> {
        if !(x > 0.0) {
            return Err(TodaError::Domain(format!("x must be positive, got {x}")));
        }
        let n1 = rank.np1() as i64;
        let start = RayIndex::new(n1, rank).theta();
        let zero_rays = ((1 - n1)..=n1)
            .rev()
            .map(|p| {
                let index = RayIndex::new(p, rank);
                ContourRay { kind: RayKind::Zero, index, angle: reduce(index.theta(), start) }
            })
            .collect::<Vec<_>>();
        // first infinity index whose direction -theta_k is the reference start
        let p0 = if rank.is_even() { n1 - 2 } else { n1 - 1 };
        let infinity_rays = (p0..p0 + 2 * n1)
            .map(|p| {
                let index = RayIndex::new(p, rank);
                ContourRay { kind: RayKind::Infinity, index, angle: reduce(-index.theta(), start) }
            })
            .collect::<Vec<_>>();
        Ok(ContourSpec { rank, x, reference_start: start, zero_rays, infinity_rays, circle_radius: x * x })
    }

    /// Both kinds sorted by angle, and whether each kind's angles are distinct.
    pub fn is_well_formed(&self) -> bool {
        let ok = |rays: &[ContourRay]| {
            let n = rays.len() == 2 * self.rank.np1();
            let sorted = rays.windows(2).all(|w| w[1].angle > w[0].angle + 1e-12);
            let inside = rays
                .iter()
                .all(|r| r.angle >= self.reference_start - 1e-12 && r.angle < self.reference_start + 2.0 * PI);
            n && sorted && inside
        };
        ok(&self.zero_rays) && ok(&self.infinity_rays)
    }
}

/// `G~ = I + sum_{(i,j) in support} e^{-x(l + 1/l) L_|j-i|} s_ij E_ij` on the
/// infinity ray `k`, parametrised by `l = |zeta| x`.
pub fn build_jump(ray: RayIndex, l: f64, s: &StokesData, x: f64) -> Result<CMat> {
    if !(l > 0.0 && x > 0.0) {
        return Err(TodaError::Domain(format!("need l > 0 and x > 0, got l = {l}, x = {x}")));
    }
    let q = build_qtilde(ray, s)?;
    let mut g = CMat::identity(q.nrows(), q.ncols());
    for (i, j) in ray_support(ray) {
        let rate = decay_rate(i.abs_diff(j), s.rank);
        g[(i, j)] += q[(i, j)] * (-x * (l + 1.0 / l) * rate).exp();
    }
    Ok(g)
}

/// The same jump as `e(zeta) Q~ e(zeta)^(-1)` with
/// `e(zeta) = exp(d^(-1) / zeta) exp(x^2 zeta d)` at `zeta = (l/x) e^{-i theta_k}`.
pub fn build_jump_by_conjugation(ray: RayIndex, l: f64, s: &StokesData, x: f64) -> Result<CMat> {
    let rank = s.rank;
    let q = build_qtilde(ray, s)?;
    let zeta = C64::from_polar(l / x, -ray.theta());
    let exps: Vec<C64> = (0..rank.np1())
        .map(|j| {
            let w = rank.omega_pow(j as f64);
            w.inv() / zeta + w * zeta * (x * x)
        })
        .collect();
    let e = diag(&exps.iter().map(|z| z.exp()).collect::<Vec<_>>());
    let e_inv = diag(&exps.iter().map(|z| (-z).exp()).collect::<Vec<_>>());
    Ok(e * q * e_inv)
}

#[derive(Clone, Debug, Serialize)]
pub struct JumpBound {
    /// `max_l |G~ - I|_max` at each sampled `x`.
    pub sup_norms: Vec<(f64, f64)>,
    /// `sup_norm e^{2 L_1 x}` at each `x`.
    pub constants: Vec<f64>,
    /// Relative spread `(max - min) / max` of the constants.
    pub spread: f64,
}

/// Samples `max_l |G~(l) - I|_max` over all infinity rays and fits the constant
/// in the bound `A e^{-2 L_1 x}`.
pub fn jump_decay_bound(s: &StokesData, xs: &[f64]) -> Result<JumpBound> {
    let rank = s.rank;
    let spec = ContourSpec::new(rank, 1.0)?;
    let l1 = decay_rate(1, rank);
    let ls: Vec<f64> = (-200..=200).map(|k| (k as f64 * 0.02).exp()).collect();
    let sup_norms = xs
        .par_iter()
        .map(|&x| {
            let mut sup: f64 = 0.0;
            for r in &spec.infinity_rays {
                for &l in &ls {
                    let g = build_jump(r.index, l, s, x)?;
                    let id = CMat::identity(g.nrows(), g.ncols());
                    sup = sup.max(max_abs_diff(&g, &id));
                }
            }
            Ok((x, sup))
        })
        .collect::<Result<Vec<_>>>()?;
    let constants: Vec<f64> = sup_norms.iter().map(|(x, v)| v * (2.0 * l1 * x).exp()).collect();
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(JumpBound { sup_norms, constants, spread: if hi > 0.0 { (hi - lo) / hi } else { 0.0 } })
}

/// Offset `sigma` in `Psi^inf_k = Psi^0_{sigma - k} Z_{sigma - k}`, in units of `1/N`.
fn opposite_offset(rank: Rank) -> i64 {
    if rank.is_even() {
        2 * rank.n() as i64 + 1
    } else {
        2 * rank.np1() as i64
    }
}

/// `(1/N) C`.
pub fn scaled_c(rank: Rank) -> CMat {
    let st = StructureMatrices::new(rank);
    &st.c_perm * c(1.0 / rank.np1() as f64, 0.0)
}

/// `Z_1` from `E_1`: `E_1 = Z_1 Q^inf_{n/N}` (even) or `E_1 = Z_1` (odd).
pub fn z_from_e1(e1: &CMat, s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    if rank.is_even() {
        let q = stokes_factor_inf(RayIndex::new(rank.n() as i64, rank), s)?;
        Ok(e1 * inverse(&q, "Q^inf_(n/N)")?)
    } else {
        Ok(e1.clone())
    }
}

/// `Z_k` for `k = 1, 1 + 1/N, ..., 3` from
/// `Z_{k+1/N} = (Q^0_k)^(-1) Z_k (Q^inf_{sigma - 1/N - k})^(-1)`.
pub fn z_matrix_chain(e1: &CMat, s: &StokesData) -> Result<Vec<(RayIndex, CMat)>> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let sigma = opposite_offset(rank);
    let mut z = z_from_e1(e1, s)?;
    let mut out = vec![(RayIndex::new(n1, rank), z.clone())];
    for p in n1..3 * n1 {
        let q0 = stokes_factor_zero(RayIndex::new(p, rank), s)?;
        let qi = stokes_factor_inf(RayIndex::new(sigma - 1 - p, rank), s)?;
        z = inverse(&q0, "Q^0")? * z * inverse(&qi, "Q^inf")?;
        out.push((RayIndex::new(p + 1, rank), z.clone()));
    }
    Ok(out)
}

/// Largest deviation of the chain from `(1/N) C`.
pub fn z_chain_defect(chain: &[(RayIndex, CMat)]) -> f64 {
    let Some((first, _)) = chain.first() else { return 0.0 };
    let rank = Rank::new(first.np1).expect("chain built from a valid rank");
    let target = scaled_c(rank);
    chain.iter().map(|(_, z)| max_abs_diff(z, &target)).fold(0.0, f64::max)
}

/// `max_k |Q^inf_k - (C/N)^(-1) (Q^0_{sigma' - k})^(-1) (C/N)|` over one period,
/// with `sigma' = 2n/N` (even) or `(2n+1)/N` (odd).
pub fn opposite_sector_residual(s: &StokesData) -> Result<f64> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let sigma = opposite_offset(rank) - 1;
    let cn = scaled_c(rank);
    let cn_inv = inverse(&cn, "C/N")?;
    let mut worst: f64 = 0.0;
    for p in n1..3 * n1 {
        let lhs = stokes_factor_inf(RayIndex::new(p, rank), s)?;
        let q0 = stokes_factor_zero(RayIndex::new(sigma - p, rank), s)?;
        let rhs = &cn_inv * inverse(&q0, "Q^0")? * &cn;
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    Ok(worst)
}

/// `max_k |Q^0_k - C conj(Q^0_{sigma' - k})^(-1) C|` over one period.
pub fn reality_residual(s: &StokesData) -> Result<f64> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let sigma = opposite_offset(rank) - 1;
    let st = StructureMatrices::new(rank);
    let mut worst: f64 = 0.0;
    for p in n1..3 * n1 {
        let q = stokes_factor_zero(RayIndex::new(p, rank), s)?;
        let qo = stokes_factor_zero(RayIndex::new(sigma - p, rank), s)?;
        let rhs = &st.c_perm * inverse(&qo.map(|z| z.conj()), "conjugate Q^0")? * &st.c_perm;
        worst = worst.max(max_abs_diff(&q, &rhs));
    }
    Ok(worst)
}

/// Ordered product of the Stokes factors over `k = 1, ..., 3 - 1/N`.
pub fn period_product(s: &StokesData, kind: RayKind) -> Result<CMat> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let mut p = CMat::identity(rank.np1(), rank.np1());
    for j in n1..3 * n1 {
        let ray = RayIndex::new(j, rank);
        p *= match kind {
            RayKind::Zero => stokes_factor_zero(ray, s)?,
            RayKind::Infinity => stokes_factor_inf(ray, s)?,
        };
    }
    Ok(p)
}

/// `|P^inf - E_1^(-1) (P^0)^(-1) E_1|`: the loop around the origin seen from
/// both ends (the two continuations run in opposite senses).
pub fn period_factorization_residual(e1: &CMat, s: &StokesData) -> Result<f64> {
    let p0 = period_product(s, RayKind::Zero)?;
    let pi = period_product(s, RayKind::Infinity)?;
    let rhs = inverse(e1, "E_1")? * inverse(&p0, "P^0")? * e1;
    Ok(max_abs_diff(&pi, &rhs))
}

/// `int_0^inf (G~(l) - I) dl / l` on one ray, by the trapezoid rule in `log l`.
fn ray_integral(ray: RayIndex, s: &StokesData, x: f64) -> Result<CMat> {
    let n1 = s.rank.np1();
    let l_min = decay_rate(1, s.rank);
    // x L (l + 1/l) - 2 x L <= 40 over the nodes kept
    let umax = (1.0 + 40.0 / (2.0 * x * l_min)).acosh();
    let h = (umax / 400.0).min(0.5 / (2.0 * x * l_min).sqrt().max(1.0));
    let steps = (umax / h).ceil() as i64;
    let mut acc = CMat::zeros(n1, n1);
    let id = CMat::identity(n1, n1);
    for k in -steps..=steps {
        let g = build_jump(ray, (k as f64 * h).exp(), s, x)?;
        acc += (g - &id) * c(h, 0.0);
    }
    Ok(acc)
}

#[derive(Clone, Debug, Serialize)]
pub struct Reconstruction {
    pub x: f64,
    /// `w_0..w_n`.
    pub w: Vec<f64>,
    /// Off-diagonal size of `F^(-1) d^(-1/2) log(Y) d^(1/2) F` (zero when the
    /// summed jumps have the circulant form required for a diagonal `w`).
    pub diagonal_defect: f64,
}

/// Stokes data of the doubled even system `(w_0, .., w_n, -w_n, .., -w_0)` of
/// rank `2N`: `s#_{2j} = s_j`, odd entries zero.
pub fn doubled_stokes(s: &StokesData) -> Result<StokesData> {
    let rank = s.rank;
    let big = Rank::new(2 * rank.np1())?;
    let essential: Vec<f64> = (1..=big.d()).map(|i| if i % 2 == 0 { s.s[i / 2] } else { 0.0 }).collect();
    StokesData::from_essential(big, &essential)
}

/// Leading-order `w(x)` from `Y~(0) = I + (1/2 pi i) sum_rays int (G~ - I) dl/l`,
/// taking `log Y~(0) = d^(1/2) F (-2w) F^(-1) d^(-1/2)` and inverting the sine
/// modes. Odd ranks go through the doubled even system.
pub fn first_order_reconstruction(s: &StokesData, x: f64) -> Result<Reconstruction> {
    if !(x >= RECONSTRUCTION_MIN_X) {
        return Err(TodaError::Domain(format!(
            "first-order reconstruction needs x >= {RECONSTRUCTION_MIN_X}, got {x}"
        )));
    }
    if s.rank.is_even() {
        return reconstruct_even(s, x);
    }
    let mut rec = reconstruct_even(&doubled_stokes(s)?, x)?;
    rec.w.truncate(s.rank.np1());
    Ok(rec)
}

fn reconstruct_even(s: &StokesData, x: f64) -> Result<Reconstruction> {
    let rank = s.rank;
    let n1 = rank.np1();
    let spec = ContourSpec::new(rank, x)?;
    let mut sum = CMat::zeros(n1, n1);
    for r in &spec.infinity_rays {
        sum += ray_integral(r.index, s, x)?;
    }
    let y0 = CMat::identity(n1, n1) + sum * c(0.0, -1.0 / (2.0 * PI));
    let log = log_near_identity(&y0)?;
    let modes: Vec<f64> = (1..=rank.d()).map(|p| (log[(0, p)] / c(0.0, 4.0 / n1 as f64)).re).collect();
    let half = w_from_modes(&modes, rank)?;
    let w = extend_antisymmetric(&half, rank)?;
    let st = StructureMatrices::new(rank);
    let f_inv = inverse(&st.fourier, "Fourier matrix")?;
    let inner = &f_inv * st.d_pow(-0.5) * &log * &st.half_d * &st.fourier;
    let mut off: f64 = 0.0;
    for i in 0..n1 {
        for j in 0..n1 {
            if i != j {
                off = off.max(inner[(i, j)].norm());
            }
        }
    }
    Ok(Reconstruction { x, w, diagonal_defect: off })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_connection, e1_identity, stokes_params, AsymptoticData};
    use crate::toda_solver::{assemble_tt_toda, solve_bvp, SolverOptions};

    fn rank(n1: usize) -> Rank {
        Rank::new(n1).unwrap()
    }

    fn stokes(n1: usize) -> StokesData {
        let m: Vec<f64> = (0..n1).map(|i| 0.3 - 0.6 * i as f64 / (n1 - 1) as f64).collect();
        stokes_params(&AsymptoticData::from_m(rank(n1), &m, None).unwrap()).unwrap()
    }

    #[test]
    fn contour_has_sorted_distinct_rays() {
        for n1 in 2..=7 {
            let spec = ContourSpec::new(rank(n1), 3.0).unwrap();
            assert!(spec.is_well_formed(), "N = {n1}");
            assert!((spec.circle_radius - 9.0).abs() < 1e-15);
            // zero and infinity directions coincide as sets
            for (a, b) in spec.zero_rays.iter().zip(&spec.infinity_rays) {
                assert!((a.angle - b.angle).abs() < 1e-12);
            }
        }
        if let Ok(spec) = ContourSpec::new(rank(4), 1.0) {
            assert!((spec.reference_start + PI / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn explicit_jump_matches_conjugation() {
        for n1 in 2..=6 {
            let s = stokes(n1);
            let spec = ContourSpec::new(rank(n1), 1.3).unwrap();
            for r in &spec.infinity_rays {
                for l in [0.3, 1.0, 2.5] {
                    let a = build_jump(r.index, l, &s, 1.3).unwrap();
                    let b = build_jump_by_conjugation(r.index, l, &s, 1.3).unwrap();
                    assert!(max_abs_diff(&a, &b) < 1e-12, "N = {n1} ray {}", r.index.label());
                }
            }
        }
    }

    #[test]
    fn zero_stokes_gives_identity_jump() {
        let s = StokesData::zero(rank(4));
        let g = build_jump(RayIndex::new(5, rank(4)), 0.7, &s, 2.0).unwrap();
        assert_eq!(g, CMat::identity(4, 4));
    }

    #[test]
    fn jump_saturates_bound_at_unit_l() {
        let r = rank(3);
        let s = stokes(3);
        let spec = ContourSpec::new(r, 2.0).unwrap();
        for ray in &spec.infinity_rays {
            let g = build_jump(ray.index, 1.0, &s, 2.0).unwrap();
            for (i, j) in ray_support(ray.index) {
                let want = (-2.0 * 2.0 * decay_rate(i.abs_diff(j), r)).exp() * s.s[i.abs_diff(j)].abs();
                assert!((g[(i, j)].norm() - want).abs() < 1e-15);
            }
        }
        let bound = jump_decay_bound(&s, &[3.0, 5.0, 7.0, 10.0]).unwrap();
        assert!(bound.spread < 1e-12, "{:?}", bound.constants);
    }

    #[test]
    fn identity_connection_gives_constant_chain() {
        for n1 in 2..=6 {
            let s = stokes(n1);
            let e1 = e1_identity(&s).unwrap();
            let chain = z_matrix_chain(&e1, &s).unwrap();
            assert_eq!(chain.len(), 2 * n1 + 1);
            assert!(z_chain_defect(&chain) < 1e-12, "N = {n1}");
            assert!(opposite_sector_residual(&s).unwrap() < 1e-12);
            assert!(reality_residual(&s).unwrap() < 1e-12);
            assert!(period_factorization_residual(&e1, &s).unwrap() < 1e-10);
        }
    }

    #[test]
    fn generic_connection_moves_the_chain() {
        let r = rank(4);
        let data = AsymptoticData::from_m(r, &[0.3, 0.1, -0.1, -0.3], Some(&[1.0, 1.0, 1.0, 1.0])).unwrap();
        let conn = build_connection(&data).unwrap();
        let s = stokes_params(&data).unwrap();
        let chain = z_matrix_chain(&conn.e1, &s).unwrap();
        assert!(z_chain_defect(&chain) > 1e-3);
        assert!(period_factorization_residual(&conn.e1, &s).unwrap() < 1e-10);
    }

    #[test]
    fn doubled_data_interleaves_zeros() {
        let s = stokes(3);
        let big = doubled_stokes(&s).unwrap();
        assert_eq!(big.rank.np1(), 6);
        assert_eq!(big.s, vec![1.0, 0.0, s.s[1], 0.0, s.s[1], 0.0, 1.0]);
    }

    #[test]
    fn reconstruction_of_zero_data_is_zero() {
        let rec = first_order_reconstruction(&StokesData::zero(rank(3)), 6.0).unwrap();
        assert!(rec.w.iter().all(|v| *v == 0.0));
        assert!(first_order_reconstruction(&StokesData::zero(rank(3)), 2.0).is_err());
    }

    #[test]
    fn reconstruction_follows_the_exponential_law() {
        let r = rank(2);
        let s = StokesData::from_essential(r, &[-1.0]).unwrap();
        let a = first_order_reconstruction(&s, 6.0).unwrap();
        let b = first_order_reconstruction(&s, 12.0).unwrap();
        let l1 = decay_rate(1, r);
        // w(2x)/w(x) ~ 2^(-1/2) e^(-2 L x)
        let ratio = b.w[0] / a.w[0] * 2f64.sqrt() / (-2.0 * l1 * 6.0).exp();
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
        assert!(a.diagonal_defect < 1e-12 * a.w[0].abs().max(1e-300) * 1e3);
    }

    #[test]
    fn reconstruction_matches_radial_solve() {
        for (n1, m) in [(2usize, vec![1.0 / 6.0, -1.0 / 6.0]), (3, vec![0.2, 0.0, -0.2])] {
            let r = rank(n1);
            let s = stokes_params(&AsymptoticData::from_m(r, &m, None).unwrap()).unwrap();
            let red = assemble_tt_toda(r, &m).unwrap();
            let sol = solve_bvp(&red.problem, &SolverOptions::default()).unwrap();
            let rec = first_order_reconstruction(&s, 6.0).unwrap();
            let pde = red.w_at(&sol, 6.0);
            for i in 0..r.d() {
                let rel = (rec.w[i] - pde[i]).abs() / pde[i].abs();
                assert!(rel < 0.05, "N = {n1}, i = {i}: {} vs {}", rec.w[i], pde[i]);
            }
        }
    }
}
