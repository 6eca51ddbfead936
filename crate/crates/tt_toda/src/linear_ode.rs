//! Meromorphic linear systems in `zeta`: the main system (order-2 poles at both
//! ends), the subsidiary system `-h Pi h^{-1}/zeta^2 + m/zeta` and its normalized
//! form `-Pi/zeta^2 + m/zeta`.
//!
//! Canonical solutions at `zeta = 0` are computed numerically: on every
//! Stokes-free chamber inside the sector, the formal solution fixes a flag of
//! solution subspaces ordered by growth; integrating that flag outward with QR
//! and transporting it to a common point gives linear conditions that pin down
//! each column. Frobenius series at `zeta = infinity` close the loop.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::algebra::{Rank, StructureMatrices};
use crate::error::{Result, TodaError};
use crate::linalg::{c, determinant, diag_real, inverse, lstsq, max_abs, max_abs_diff, solve, CMat, CVec, C64, I};
use crate::rk::{integrate, RkOptions};
use crate::spectral::RayIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OdeKind {
    Main,
    Subsidiary,
    Normalized,
}

/// `A(zeta) = lead/zeta^2 + res/zeta + konst`.
#[derive(Clone, Debug)]
pub struct OdeSystem {
    pub rank: Rank,
    pub kind: OdeKind,
    pub m: Vec<f64>,
    pub h: Vec<f64>,
    lead: CMat,
    res: CMat,
    konst: CMat,
}

impl OdeSystem {
    pub fn normalized(rank: Rank, m: &[f64]) -> Result<Self> {
        check_len(rank, m)?;
        let st = StructureMatrices::new(rank);
        let n1 = rank.np1();
        Ok(OdeSystem {
            rank,
            kind: OdeKind::Normalized,
            m: m.to_vec(),
            h: vec![1.0; n1],
            lead: -st.pi.clone(),
            res: diag_real(m),
            konst: CMat::zeros(n1, n1),
        })
    }

    pub fn subsidiary(rank: Rank, m: &[f64], h: &[f64]) -> Result<Self> {
        check_len(rank, m)?;
        check_len(rank, h)?;
        if h.iter().any(|x| !(*x > 0.0)) {
            return Err(TodaError::InvalidInput("h must be positive".into()));
        }
        let st = StructureMatrices::new(rank);
        let n1 = rank.np1();
        let hinv: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
        Ok(OdeSystem {
            rank,
            kind: OdeKind::Subsidiary,
            m: m.to_vec(),
            h: h.to_vec(),
            lead: -(diag_real(h) * &st.pi * diag_real(&hinv)),
            res: diag_real(m),
            konst: CMat::zeros(n1, n1),
        })
    }

    /// Main system with `W = e^{-w} Pi e^{w}`: `-W/zeta^2 - x w_x/zeta + x^2 W^T`.
    pub fn main(rank: Rank, w: &[f64], xwx: &[f64], x: f64) -> Result<Self> {
        check_len(rank, w)?;
        check_len(rank, xwx)?;
        let st = StructureMatrices::new(rank);
        let em: Vec<f64> = w.iter().map(|v| (-v).exp()).collect();
        let ep: Vec<f64> = w.iter().map(|v| v.exp()).collect();
        let big_w = diag_real(&em) * &st.pi * diag_real(&ep);
        let neg: Vec<f64> = xwx.iter().map(|v| -v).collect();
        Ok(OdeSystem {
            rank,
            kind: OdeKind::Main,
            m: vec![0.0; rank.np1()],
            h: vec![1.0; rank.np1()],
            lead: -big_w.clone(),
            res: diag_real(&neg),
            konst: big_w.transpose() * c(x * x, 0.0),
        })
    }

    pub fn rhs(&self, zeta: C64) -> Result<CMat> {
        if zeta.norm() == 0.0 {
            return Err(TodaError::Domain("zeta = 0 is a pole".into()));
        }
        let zi = zeta.inv();
        Ok(&self.lead * (zi * zi) + &self.res * zi + &self.konst)
    }

    pub fn trace_rhs(&self, zeta: C64) -> Result<C64> {
        Ok(self.rhs(zeta)?.trace())
    }

    fn normalized_part(&self) -> Result<OdeSystem> {
        match self.kind {
            OdeKind::Normalized => Ok(self.clone()),
            OdeKind::Subsidiary => OdeSystem::normalized(self.rank, &self.m),
            OdeKind::Main => Err(TodaError::InvalidInput(
                "canonical solutions are computed for the subsidiary and normalized systems".into(),
            )),
        }
    }

    fn h_mat(&self) -> CMat {
        diag_real(&self.h)
    }
}

fn check_len(rank: Rank, v: &[f64]) -> Result<()> {
    if v.len() != rank.np1() {
        return Err(TodaError::DimensionMismatch { expected: rank.np1(), got: v.len() });
    }
    Ok(())
}

/// A path `zeta(s)`, `s in [0, 1]`.
#[derive(Clone, Copy, Debug)]
pub enum Path {
    Segment { from: C64, to: C64 },
    /// Circle arc of radius `r` from angle `phi0` to `phi1`.
    Arc { r: f64, phi0: f64, phi1: f64 },
    /// Radial path on the ray `arg zeta = phi`, linear in `xi = 1/|zeta|`.
    InverseRay { phi: f64, xi0: f64, xi1: f64 },
}

impl Path {
    pub fn point(&self, s: f64) -> C64 {
        match *self {
            Path::Segment { from, to } => from + (to - from) * s,
            Path::Arc { r, phi0, phi1 } => C64::from_polar(r, phi0 + (phi1 - phi0) * s),
            Path::InverseRay { phi, xi0, xi1 } => C64::from_polar(1.0 / (xi0 + (xi1 - xi0) * s), phi),
        }
    }

    pub fn velocity(&self, s: f64) -> C64 {
        match *self {
            Path::Segment { from, to } => to - from,
            Path::Arc { r, phi0, phi1 } => I * (phi1 - phi0) * C64::from_polar(r, phi0 + (phi1 - phi0) * s),
            Path::InverseRay { phi, xi0, xi1 } => {
                let xi = xi0 + (xi1 - xi0) * s;
                -C64::from_polar(1.0, phi) * ((xi1 - xi0) / (xi * xi))
            }
        }
    }

    pub fn length_estimate(&self) -> f64 {
        match *self {
            Path::Segment { from, to } => (to - from).norm(),
            Path::Arc { r, phi0, phi1 } => r * (phi1 - phi0).abs(),
            Path::InverseRay { xi0, xi1, .. } => (1.0 / xi0 - 1.0 / xi1).abs(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Transport {
    #[serde(skip)]
    pub value: CMat,
    pub steps: usize,
    /// `|det(end) - det(start)| / |det(start)|`; zero for traceless systems up to error.
    pub det_drift: f64,
}

pub fn transport(sys: &OdeSystem, x0: &CMat, path: Path, opts: &RkOptions) -> Result<Transport> {
    let f = |s: f64, y: &CMat| -> CMat {
        let z = path.point(s);
        let a = sys.rhs(z).unwrap_or_else(|_| CMat::from_element(y.nrows(), y.nrows(), C64::new(f64::NAN, 0.0)));
        a * y * path.velocity(s)
    };
    let out = integrate(f, 0.0, 1.0, x0, opts)?;
    let drift = if x0.nrows() == x0.ncols() {
        let d0 = determinant(x0);
        (determinant(&out.value) - d0).norm() / d0.norm()
    } else {
        0.0
    };
    Ok(Transport { value: out.value, steps: out.accepted, det_drift: drift })
}

/// Formal solution at `zeta = 0` of the normalized system:
/// `Omega (I + sum_k F_k zeta^k) e^{d/zeta}`, returns `[F_0 = I, F_1, ...]`.
pub fn formal_series_at_zero(rank: Rank, m: &[f64], order: usize) -> Result<Vec<CMat>> {
    check_len(rank, m)?;
    let st = StructureMatrices::new(rank);
    let n1 = rank.np1();
    let om_inv = inverse(&st.fourier, "Fourier matrix")?;
    let mh = &om_inv * diag_real(m) * &st.fourier;
    let dv: Vec<C64> = (0..n1).map(|j| st.d_mat[(j, j)]).collect();
    let mut out = vec![CMat::identity(n1, n1)];
    for k in 0..order {
        let fk = out.last().unwrap();
        let r = fk * c(k as f64, 0.0) - &mh * fk;
        let mut next = CMat::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                if i != j {
                    next[(i, j)] = r[(i, j)] / (dv[j] - dv[i]);
                }
            }
        }
        for i in 0..n1 {
            let mut acc = c(0.0, 0.0);
            for l in 0..n1 {
                if l != i {
                    acc += mh[(i, l)] * next[(l, i)];
                }
            }
            next[(i, i)] = acc / (k as f64 + 1.0);
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct CanonicalOptions {
    /// Radius at which the formal solution initialises each chamber flag.
    pub match_radius: f64,
    pub formal_order: usize,
    /// QR re-orthonormalisations along each inward ray.
    pub segments: usize,
    pub rk: RkOptions,
}

impl Default for CanonicalOptions {
    fn default() -> Self {
        CanonicalOptions { match_radius: 0.02, formal_order: 10, segments: 60, rk: RkOptions::default() }
    }
}

/// Orthonormal flag of solutions at `|zeta| = 1` on the ray `phi`, columns ordered
/// from most recessive at `0` to most dominant, with the complex log-scale of the
/// leading coefficient of each formal column in that basis.
struct RayFlag {
    basis: CMat,
    order: Vec<usize>,
    log_scale: Vec<C64>,
}

fn ray_flag(sys: &OdeSystem, phi: f64, opts: &CanonicalOptions) -> Result<RayFlag> {
    let rank = sys.rank;
    let n1 = rank.np1();
    let st = StructureMatrices::new(rank);
    let series = formal_series_at_zero(rank, &sys.m, opts.formal_order)?;
    let z0 = C64::from_polar(opts.match_radius, phi);
    let mut y = CMat::zeros(n1, n1);
    let mut zk = c(1.0, 0.0);
    for f in &series {
        y += f * zk;
        zk *= z0;
    }
    let x = &st.fourier * y;
    let dv: Vec<C64> = (0..n1).map(|j| st.d_mat[(j, j)]).collect();
    let rot = C64::from_polar(1.0, -phi);
    let mut order: Vec<usize> = (0..n1).collect();
    order.sort_by(|a, b| (dv[*a] * rot).re.partial_cmp(&(dv[*b] * rot).re).unwrap());
    let xo = CMat::from_fn(n1, n1, |i, p| x[(i, order[p])]);
    let mut log_scale: Vec<C64> = order.iter().map(|&l| dv[l] / z0).collect();

    let (mut q, r) = qr_parts(&xo);
    for p in 0..n1 {
        log_scale[p] += r[(p, p)].ln();
    }
    let xi_start = 1.0 / opts.match_radius;
    let nodes: Vec<f64> =
        (0..=opts.segments).map(|k| xi_start.powf(1.0 - k as f64 / opts.segments as f64)).collect();
    for w in nodes.windows(2) {
        let out = transport(sys, &q, Path::InverseRay { phi, xi0: w[0], xi1: w[1] }, &opts.rk)?;
        let (qn, rn) = qr_parts(&out.value);
        for p in 0..n1 {
            log_scale[p] += rn[(p, p)].ln();
        }
        q = qn;
    }
    Ok(RayFlag { basis: q, order, log_scale })
}

fn qr_parts(a: &CMat) -> (CMat, CMat) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Canonical solution of the normalized system on the sector attached to a ray,
/// stored by its value at `zeta = e^{i center}`.
#[derive(Clone, Debug)]
pub struct CanonicalSolution {
    pub ray: RayIndex,
    pub center: f64,
    pub at_center: CMat,
    /// Worst relative least-squares residual over the columns.
    pub fit_residual: f64,
    sys: OdeSystem,
    rk: RkOptions,
}

impl CanonicalSolution {
    /// Value on the unit circle at angle `phi` (continued along the arc).
    pub fn on_unit_circle(&self, phi: f64) -> Result<CMat> {
        let t = transport(&self.sys, &self.at_center, Path::Arc { r: 1.0, phi0: self.center, phi1: phi }, &self.rk)?;
        Ok(self.sys.h_mat() * t.value)
    }

    /// Value at `r e^{i phi}`: arc on the unit circle, then radially.
    pub fn eval(&self, r: f64, phi: f64) -> Result<CMat> {
        let t = transport(&self.sys, &self.at_center, Path::Arc { r: 1.0, phi0: self.center, phi1: phi }, &self.rk)?;
        let v = if (r - 1.0).abs() > 0.0 {
            transport(
                &self.sys,
                &t.value,
                Path::Segment { from: C64::from_polar(1.0, phi), to: C64::from_polar(r, phi) },
                &self.rk,
            )?
            .value
        } else {
            t.value
        };
        Ok(self.sys.h_mat() * v)
    }
}

/// Canonical solution attached to the sector of `ray`.
pub fn canonical_at_zero(sys: &OdeSystem, ray: RayIndex, opts: &CanonicalOptions) -> Result<CanonicalSolution> {
    let norm = sys.normalized_part()?;
    let rank = sys.rank;
    let n1 = rank.np1();
    let (lo, hi) = ray.sector();
    let center = 0.5 * (lo + hi);
    let step = PI / n1 as f64;
    let first = (lo / step + 1e-9).floor() as i64;
    let last = (hi / step - 1e-9).ceil() as i64;
    let mut rows: Vec<Vec<(Vec<C64>, C64)>> = vec![Vec::new(); n1];
    for cidx in first..last {
        let phi = (cidx as f64 + 0.5) * step;
        if phi <= lo || phi >= hi {
            continue;
        }
        let flag = ray_flag(&norm, phi, opts)?;
        let moved = transport(&norm, &flag.basis, Path::Arc { r: 1.0, phi0: phi, phi1: center }, &opts.rk)?;
        let inv = inverse(&moved.value, "transported flag")?;
        for (p, &col) in flag.order.iter().enumerate() {
            for q in p..n1 {
                let row: Vec<C64> = (0..n1).map(|j| inv[(q, j)]).collect();
                let target = if q == p { flag.log_scale[p].exp() } else { c(0.0, 0.0) };
                rows[col].push((row, target));
            }
        }
    }
    let mut at_center = CMat::zeros(n1, n1);
    let mut fit_residual: f64 = 0.0;
    for col in 0..n1 {
        let k = rows[col].len();
        if k < n1 {
            return Err(TodaError::NotConverged(format!("column {col} under-determined ({k} conditions)")));
        }
        let a = CMat::from_fn(k, n1, |r, j| rows[col][r].0[j]);
        let b = CVec::from_iterator(k, rows[col].iter().map(|r| r.1));
        let y = lstsq(&a, &b)?;
        let resid = (&a * &y - &b).norm() / b.norm();
        fit_residual = fit_residual.max(resid);
        at_center.set_column(col, &y);
    }
    Ok(CanonicalSolution { ray, center, at_center, fit_residual, sys: norm, rk: opts.rk })
}

/// Halves the matching radius from `opts.match_radius` until two successive
/// canonical solutions agree to `tol` (relative), down to `min_radius`.
pub fn canonical_adaptive(
    sys: &OdeSystem,
    ray: RayIndex,
    opts: &CanonicalOptions,
    tol: f64,
    min_radius: f64,
) -> Result<(CanonicalSolution, f64)> {
    let mut o = *opts;
    let mut prev = canonical_at_zero(sys, ray, &o)?;
    loop {
        o.match_radius /= 2.0;
        if o.match_radius < min_radius {
            return Err(TodaError::NotConverged(format!(
                "canonical solution for ray {} did not stabilise above radius {min_radius}",
                ray.label()
            )));
        }
        let next = canonical_at_zero(sys, ray, &o)?;
        let diff = max_abs_diff(&next.at_center, &prev.at_center) / max_abs(&next.at_center);
        if diff <= tol {
            return Ok((next, diff));
        }
        prev = next;
    }
}

/// `Q_k = Phi_k^{-1} Phi_{k + 1/(n+1)}` evaluated on the singular direction `theta_k`.
pub fn numeric_stokes(sys: &OdeSystem, ray: RayIndex, opts: &CanonicalOptions) -> Result<CMat> {
    let a = canonical_at_zero(sys, ray, opts)?;
    let b = canonical_at_zero(sys, ray.shifted(1), opts)?;
    let theta = ray.theta();
    let ta = a.on_unit_circle(theta)?;
    let tb = b.on_unit_circle(theta)?;
    solve(&ta, &tb, "canonical solution on singular direction")
}

/// Frobenius solution `(I + sum_k phi_k zeta^{-k}) zeta^m` at infinity.
#[derive(Clone, Debug)]
pub struct FrobeniusSolution {
    pub coeffs: Vec<CMat>,
    pub m: Vec<f64>,
    /// `|zeta|` beyond which consecutive truncation terms fall below a tenth.
    pub radius_hint: f64,
}

impl FrobeniusSolution {
    /// Evaluates at `exp(lz)` with `zeta^m = exp(m lz)` on the continued logarithm.
    pub fn eval_log(&self, lz: C64) -> CMat {
        let n1 = self.m.len();
        let zinv = (-lz).exp();
        let mut sum = CMat::identity(n1, n1);
        let mut p = c(1.0, 0.0);
        for phi in &self.coeffs {
            p *= zinv;
            sum += phi * p;
        }
        let pw = CMat::from_fn(n1, n1, |i, j| if i == j { (lz * self.m[i]).exp() } else { c(0.0, 0.0) });
        sum * pw
    }

    pub fn eval(&self, zeta: C64) -> CMat {
        self.eval_log(zeta.ln())
    }

    pub fn truncation_order(&self) -> usize {
        self.coeffs.len()
    }
}

/// Coefficients solve `[m, phi_k] + k phi_k = L phi_{k-1}` where `L` is the
/// `zeta^{-2}` coefficient with its sign flipped.
pub fn frobenius_at_infinity(sys: &OdeSystem, order: usize) -> Result<FrobeniusSolution> {
    if sys.kind == OdeKind::Main {
        return Err(TodaError::InvalidInput("Frobenius expansion needs a simple pole at infinity".into()));
    }
    let n1 = sys.rank.np1();
    let lead = -sys.lead.clone();
    let mut coeffs = Vec::with_capacity(order);
    let mut prev = CMat::identity(n1, n1);
    let mut radius_hint: f64 = 0.0;
    let mut prev_norm = 1.0;
    for k in 1..=order {
        let r = &lead * &prev;
        let mut next = CMat::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                let den = sys.m[i] - sys.m[j] + k as f64;
                if den.abs() < 1e-10 {
                    if r[(i, j)].norm() > 1e-10 {
                        return Err(TodaError::NonGeneric(format!(
                            "resonance m_{i} - m_{j} = {} obstructs the series",
                            -(k as f64)
                        )));
                    }
                    continue;
                }
                next[(i, j)] = r[(i, j)] / den;
            }
        }
        let nn = max_abs(&next);
        if prev_norm > 0.0 && nn > 0.0 {
            radius_hint = radius_hint.max(10.0 * nn / prev_norm);
        }
        prev_norm = nn;
        coeffs.push(next.clone());
        prev = next;
    }
    Ok(FrobeniusSolution { coeffs, m: sys.m.clone(), radius_hint })
}

/// `max |X' - A X| / |X|` at `zeta` by fourth-order central differences.
pub fn frobenius_residual(sys: &OdeSystem, sol: &FrobeniusSolution, zeta: C64) -> Result<f64> {
    let h = 1e-3 * zeta.norm();
    let f = |z: C64| sol.eval(z);
    let d = (f(zeta - 2.0 * h) - f(zeta + 2.0 * h) + (f(zeta + h) - f(zeta - h)) * c(8.0, 0.0)) / c(12.0 * h, 0.0);
    let x = f(zeta);
    let a = sys.rhs(zeta)?;
    Ok(max_abs_diff(&d, &(a * &x)) / max_abs(&x))
}

#[derive(Clone, Debug)]
pub struct NumericD1 {
    /// Connection matrix with the diagonal normalisation folded in (`D_1 h`).
    pub d1: CMat,
    /// Spread between the sample points, relative.
    pub sample_spread: f64,
}

/// `Phi^(inf) = Phi_1 D_1`, solved at several points of the first sector on the unit circle.
pub fn numeric_d1(sys: &OdeSystem, opts: &CanonicalOptions, frob_order: usize) -> Result<NumericD1> {
    let rank = sys.rank;
    let ray = RayIndex::new(rank.np1() as i64, rank);
    let canon = canonical_at_zero(sys, ray, opts)?;
    let norm = sys.normalized_part()?;
    let frob = frobenius_at_infinity(&norm, frob_order)?;
    let (lo, hi) = ray.sector();
    let mut samples = Vec::new();
    for frac in [0.35, 0.5, 0.65] {
        let phi = lo + frac * (hi - lo);
        // normalized quantities: X_1^{-1} X^inf equals D_1 h for either system
        let x1 = inverse(&sys.h_mat(), "h")? * canon.on_unit_circle(phi)?;
        let xinf = frob.eval_log(c(0.0, phi));
        samples.push(solve(&x1, &xinf, "canonical solution at sample")?);
    }
    let scale = max_abs(&samples[1]);
    let spread = samples.iter().map(|s| max_abs_diff(s, &samples[1])).fold(0.0, f64::max) / scale;
    let mut mean = CMat::zeros(rank.np1(), rank.np1());
    for s in &samples {
        mean += s;
    }
    Ok(NumericD1 { d1: mean / c(samples.len() as f64, 0.0), sample_spread: spread })
}

/// Monodromy `X(start)^{-1} X(end)` of a solution continued clockwise once around
/// the unit circle (`zeta -> e^{-2 pi i} zeta`).
pub fn loop_monodromy(sys: &OdeSystem, x0: &CMat, phi: f64, rk: &RkOptions) -> Result<(CMat, f64)> {
    let t = transport(sys, x0, Path::Arc { r: 1.0, phi0: phi, phi1: phi - 2.0 * PI }, rk)?;
    Ok((solve(x0, &t.value, "loop start")?, t.det_drift))
}

#[derive(Clone, Debug, Serialize)]
pub struct NumericMonodromy {
    pub rays: Vec<String>,
    #[serde(skip)]
    pub q_num: Vec<(RayIndex, CMat)>,
    #[serde(skip)]
    pub d1_num: CMat,
    #[serde(skip)]
    pub loop_monodromy: CMat,
    pub max_det_defect: f64,
}

/// Numeric Stokes factors over one period (`2(n+1)` rays from `k = 1`), the
/// connection matrix and the loop monodromy of the canonical solution `Phi_1`.
pub fn numeric_monodromy(sys: &OdeSystem, opts: &CanonicalOptions) -> Result<NumericMonodromy> {
    let rank = sys.rank;
    let n1 = rank.np1() as i64;
    let mut q_num = Vec::new();
    let mut det_defect: f64 = 0.0;
    for p in 0..2 * n1 {
        let ray = RayIndex::new(n1 + p, rank);
        let q = numeric_stokes(sys, ray, opts)?;
        det_defect = det_defect.max((determinant(&q) - 1.0).norm());
        q_num.push((ray, q));
    }
    let d1 = numeric_d1(sys, opts, 60)?;
    let canon = canonical_at_zero(sys, RayIndex::new(n1, rank), opts)?;
    let x0 = canon.on_unit_circle(canon.center)?;
    let (mono, _) = loop_monodromy(sys, &x0, canon.center, &opts.rk)?;
    det_defect = det_defect.max((determinant(&mono) - 1.0).norm());
    Ok(NumericMonodromy {
        rays: q_num.iter().map(|(r, _)| r.label()).collect(),
        q_num,
        d1_num: d1.d1,
        loop_monodromy: mono,
        max_det_defect: det_defect,
    })
}

/// Real matrix helper for tests and reports.
pub fn real_part(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}
