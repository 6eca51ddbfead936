//! Closed-form monodromy data: asymptotic data `(m, c_hat)` from the model
//! input, Stokes parameters and factors, the inverse map `s -> m`, the
//! connection matrices and their eigenvalues, and the global-solution tests.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::algebra::{is_sl_delta_real, Rank, StructureMatrices};
use crate::error::{Result, TodaError};
use crate::linalg::{
    c, char_poly, diag, diag_real, elementary_symmetric, eigenvalues, inverse, lstsq, max_abs,
    max_abs_diff, poly_roots, CMat, CVec, C64, I,
};
use crate::special::{gamma, ln_gamma_abs};

/// Data `(c_i, k_i)` of the subsidiary connection form, `p_i(z) = c_i z^{k_i}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelInput {
    pub rank: Rank,
    pub c: Vec<f64>,
    pub k: Vec<f64>,
}

impl ModelInput {
    pub fn new(rank: Rank, c: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let n1 = rank.np1();
        for v in [&c, &k] {
            if v.len() != n1 {
                return Err(TodaError::DimensionMismatch { expected: n1, got: v.len() });
            }
        }
        if let Some(x) = c.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
            return Err(TodaError::InvalidInput(format!("c_i must be positive, got {x}")));
        }
        if let Some((i, x)) = k.iter().enumerate().find(|(_, x)| !(**x > -1.0) || !x.is_finite()) {
            return Err(TodaError::NonGeneric(format!("k_{i} = {x} <= -1: non-generic")));
        }
        for i in 1..n1 {
            let j = n1 - i;
            let scale = 1.0 + c[i].abs().max(k[i].abs());
            if (c[i] - c[j]).abs() > 1e-12 * scale || (k[i] - k[j]).abs() > 1e-12 * scale {
                return Err(TodaError::InvalidInput(format!(
                    "symmetry p_i = p_(n+1-i) violated at i={i}"
                )));
            }
        }
        Ok(ModelInput { rank, c, k })
    }

    /// Rescales the `c_i` so that their product is 1 (a rescaling of `z`).
    pub fn normalized(&self) -> Self {
        let n1 = self.rank.np1() as f64;
        let log_c: f64 = self.c.iter().map(|x| x.ln()).sum();
        let f = (-log_c / n1).exp();
        ModelInput { rank: self.rank, c: self.c.iter().map(|x| x * f).collect(), k: self.k.clone() }
    }
}

/// Asymptotic data at `t = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticData {
    pub rank: Rank,
    pub m: Vec<f64>,
    pub m_prime: Vec<f64>,
    pub chat: Vec<f64>,
    pub n_total: f64,
    pub c_prod: f64,
}

impl AsymptoticData {
    /// Builds the data directly from `m` (and optionally `c_hat`, default all ones),
    /// validating anti-symmetry and genericity.
    pub fn from_m(rank: Rank, m: &[f64], chat: Option<&[f64]>) -> Result<Self> {
        let n1 = rank.np1();
        if m.len() != n1 {
            return Err(TodaError::DimensionMismatch { expected: n1, got: m.len() });
        }
        validate_m(rank, m)?;
        let chat = match chat {
            Some(ch) => {
                if ch.len() != n1 {
                    return Err(TodaError::DimensionMismatch { expected: n1, got: ch.len() });
                }
                if ch.iter().any(|x| !(*x > 0.0)) {
                    return Err(TodaError::InvalidInput("c_hat entries must be positive".into()));
                }
                for i in 0..n1 {
                    if (ch[i] * ch[n1 - 1 - i] - 1.0).abs() > 1e-10 {
                        return Err(TodaError::InvalidInput(format!(
                            "c_hat_{i} c_hat_(n-{i}) must equal 1"
                        )));
                    }
                }
                ch.to_vec()
            }
            None => vec![1.0; n1],
        };
        let m = antisymmetrize(m);
        let m_prime = (0..n1).map(|i| m[i] - i as f64).collect();
        Ok(AsymptoticData { rank, m, m_prime, chat, n_total: n1 as f64, c_prod: 1.0 })
    }

    /// `m'_i = m_i - i` extended to all integers by `m'_{i+n+1} = m'_i - (n+1)`.
    pub fn m_prime_ext(&self, i: i64) -> f64 {
        m_prime_ext(&self.m, i)
    }

    pub fn with_chat(&self, chat: Vec<f64>) -> Self {
        AsymptoticData { chat, ..self.clone() }
    }
}

pub fn m_prime_ext(m: &[f64], i: i64) -> f64 {
    let n1 = m.len() as i64;
    let q = i.div_euclid(n1);
    let r = i.rem_euclid(n1);
    m[r as usize] - r as f64 - (q * n1) as f64
}

fn antisymmetrize(m: &[f64]) -> Vec<f64> {
    let n1 = m.len();
    (0..n1).map(|i| 0.5 * (m[i] - m[n1 - 1 - i])).collect()
}

/// Checks `m_i + m_(n-i) = 0` and the strict inequalities `m_(i-1) - m_i > -1`.
pub fn validate_m(rank: Rank, m: &[f64]) -> Result<()> {
    let n1 = rank.np1();
    if m.len() != n1 {
        return Err(TodaError::DimensionMismatch { expected: n1, got: m.len() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(TodaError::InvalidInput("m must be finite".into()));
    }
    for i in 0..n1 {
        if (m[i] + m[n1 - 1 - i]).abs() > 1e-9 {
            return Err(TodaError::InvalidInput(format!("anti-symmetry m_{i} + m_(n-{i}) = 0 violated")));
        }
    }
    for i in 0..n1 {
        let prev = m[(i + n1 - 1) % n1];
        if prev - m[i] <= -1.0 {
            return Err(TodaError::NonGeneric(format!(
                "m_{} - m_{} = {} <= -1: non-generic",
                (i + n1 - 1) % n1,
                i,
                prev - m[i]
            )));
        }
    }
    Ok(())
}

pub fn derive_asymptotic(input: &ModelInput) -> Result<AsymptoticData> {
    let rank = input.rank;
    let n1 = rank.np1();
    let n1f = n1 as f64;
    let n_total: f64 = input.k.iter().map(|k| k + 1.0).sum();
    let log_c: f64 = input.c.iter().map(|x| x.ln()).sum();

    // m_(i-1) - m_i = delta_i; m_0 + m_n = 0 fixes the constant.
    let delta: Vec<f64> = input.k.iter().map(|k| -1.0 + n1f * (k + 1.0) / n_total).collect();
    let mut m = vec![0.0; n1];
    m[0] = -delta[0] / 2.0;
    for i in 1..n1 {
        m[i] = m[i - 1] - delta[i];
    }
    let m = antisymmetrize(&m);

    // log(c_hat_(i-1) / c_hat_i)
    let rho: Vec<f64> = (0..n1)
        .map(|i| {
            let prev = m[(i + n1 - 1) % n1];
            (m[i] - prev) * (n1f / n_total).ln() + input.c[i].ln() - (input.k[i] + 1.0) * log_c / n_total
        })
        .collect();
    let mut ell = vec![0.0; n1];
    ell[0] = rho[1..].iter().sum::<f64>() / 2.0;
    for i in 1..n1 {
        ell[i] = ell[i - 1] - rho[i];
    }
    let ell: Vec<f64> = (0..n1).map(|i| 0.5 * (ell[i] - ell[n1 - 1 - i])).collect();
    let chat = ell.iter().map(|x| x.exp()).collect();
    let m_prime = (0..n1).map(|i| m[i] - i as f64).collect();
    Ok(AsymptoticData { rank, m, m_prime, chat, n_total, c_prod: log_c.exp() })
}

/// `t = ((n+1)/N) c^(1/(n+1)) z^(N/(n+1))` for `z` on the positive real axis.
pub fn t_of_z(z: C64, data: &AsymptoticData) -> Result<f64> {
    if z.im != 0.0 || !(z.re > 0.0) {
        return Err(TodaError::Domain(format!("z must be real and positive, got {z}")));
    }
    let n1 = data.rank.np1() as f64;
    Ok(n1 / data.n_total * data.c_prod.powf(1.0 / n1) * z.re.powf(data.n_total / n1))
}

/// Diagonal of `h = c_hat t^m`.
pub fn h_of_t(t: f64, data: &AsymptoticData) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(TodaError::Domain(format!("t must be positive, got {t}")));
    }
    Ok(data.chat.iter().zip(&data.m).map(|(ch, m)| ch * t.powf(*m)).collect())
}

/// Stokes parameters `s_0 = 1, s_1, ..., s_n, s_(n+1) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesData {
    pub rank: Rank,
    pub s: Vec<f64>,
}

impl StokesData {
    /// From the essential parameters `s_1..s_d`, completed by `s_i = s_(n+1-i)`.
    pub fn from_essential(rank: Rank, essential: &[f64]) -> Result<Self> {
        let n1 = rank.np1();
        if essential.len() != rank.d() {
            return Err(TodaError::DimensionMismatch { expected: rank.d(), got: essential.len() });
        }
        let mut s = vec![1.0; n1 + 1];
        for i in 1..n1 {
            let j = i.min(n1 - i);
            s[i] = essential[j - 1];
        }
        Ok(StokesData { rank, s })
    }

    pub fn zero(rank: Rank) -> Self {
        let mut s = vec![0.0; rank.np1() + 1];
        s[0] = 1.0;
        s[rank.np1()] = 1.0;
        StokesData { rank, s }
    }

    pub fn essential(&self) -> &[f64] {
        &self.s[1..=self.rank.d()]
    }
}

pub fn stokes_params(data: &AsymptoticData) -> Result<StokesData> {
    let rank = data.rank;
    let n = rank.n() as f64;
    let lam: Vec<C64> = data.m_prime.iter().map(|mp| rank.omega_pow(mp + n / 2.0)).collect();
    let e = elementary_symmetric(&lam);
    let scale = e.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
    if let Some(z) = e.iter().find(|z| z.im.abs() > 1e-10 * scale) {
        return Err(TodaError::InvalidInput(format!(
            "Stokes parameters not real (imaginary part {}); m is not anti-symmetric",
            z.im
        )));
    }
    let mut s: Vec<f64> = e.iter().map(|z| z.re).collect();
    let n1 = rank.np1();
    for i in 1..n1 {
        let avg = 0.5 * (s[i] + s[n1 - i]);
        s[i] = avg;
    }
    s[0] = 1.0;
    s[n1] = 1.0;
    Ok(StokesData { rank, s })
}

/// Ray index `k = p / (n+1)`, stored exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RayIndex {
    pub p: i64,
    pub np1: usize,
}

impl RayIndex {
    pub fn new(p: i64, rank: Rank) -> Self {
        RayIndex { p, np1: rank.np1() }
    }

    /// Ray `k = integer + frac/(n+1)`.
    pub fn from_parts(k_int: i64, frac: i64, rank: Rank) -> Self {
        RayIndex::new(k_int * rank.np1() as i64 + frac, rank)
    }

    pub fn value(&self) -> f64 {
        self.p as f64 / self.np1 as f64
    }

    pub fn shifted(&self, dp: i64) -> Self {
        RayIndex { p: self.p + dp, np1: self.np1 }
    }

    /// Singular direction in units of `pi / (2(n+1))`.
    fn angle_code(&self) -> i64 {
        let n1 = self.np1 as i64;
        let offset = if n1 % 2 == 0 { 2 } else { 1 };
        2 * n1 - offset - 2 * self.p
    }

    /// Singular direction `theta_k`.
    pub fn theta(&self) -> f64 {
        self.angle_code() as f64 * PI / (2.0 * self.np1 as f64)
    }

    /// Open Stokes sector attached to this index, `(lo, hi)` in radians.
    pub fn sector(&self) -> (f64, f64) {
        let n1 = self.np1 as f64;
        let (a, b) = if self.np1 % 2 == 0 {
            (-PI / 2.0 - PI / n1, PI / 2.0)
        } else {
            (-PI / 2.0 - PI / (2.0 * n1), PI / 2.0 + PI / (2.0 * n1))
        };
        let shift = -(self.value() - 1.0) * PI;
        (a + shift, b + shift)
    }

    pub fn label(&self) -> String {
        let n1 = self.np1 as i64;
        let g = gcd(self.p.abs(), n1);
        if n1 / g == 1 {
            format!("{}", self.p / g)
        } else {
            format!("{}/{}", self.p / g, n1 / g)
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Angle code of `arg(omega^j - omega^i)` in units of `pi / (2(n+1))`, mod `4(n+1)`.
fn pair_angle_code(i: usize, j: usize, n1: usize) -> i64 {
    let n1 = n1 as i64;
    let base = 2 * (i + j) as i64;
    let code = if i < j { n1 + base } else { -n1 + base };
    code.rem_euclid(4 * n1)
}

/// Index pairs `(i, j)` with `arg(omega^j - omega^i) = theta_k` mod `2 pi`.
pub fn ray_support(ray: RayIndex) -> Vec<(usize, usize)> {
    let n1 = ray.np1;
    let target = ray.angle_code().rem_euclid(4 * n1 as i64);
    let mut out = Vec::new();
    for i in 0..n1 {
        for j in 0..n1 {
            if i != j && pair_angle_code(i, j, n1) == target {
                out.push((i, j));
            }
        }
    }
    out
}

/// Sign attached to `E_ij` in the tilde Stokes factors.
pub fn stokes_sign(i: usize, j: usize, rank: Rank) -> f64 {
    if rank.is_even() {
        if i < j {
            1.0
        } else {
            -1.0
        }
    } else if i < j {
        if (j - i) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    } else if (i - j) % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_rank(ray: RayIndex, s: &StokesData) -> Result<()> {
    if ray.np1 != s.rank.np1() {
        return Err(TodaError::DimensionMismatch { expected: s.rank.np1(), got: ray.np1 });
    }
    Ok(())
}

/// The real Stokes factor `Q~_k = I + sum over the support of +-s_|i-j| E_ij`.
pub fn build_qtilde(ray: RayIndex, s: &StokesData) -> Result<CMat> {
    check_rank(ray, s)?;
    let n1 = s.rank.np1();
    let mut q = CMat::identity(n1, n1);
    for (i, j) in ray_support(ray) {
        let idx = i.abs_diff(j);
        q[(i, j)] += c(stokes_sign(i, j, s.rank) * s.s[idx], 0.0);
    }
    Ok(q)
}

/// Stokes factor at `zeta = 0`: `d^(1/2) Q~ d^(-1/2)` (even) or `d^(-d) Q~ d^d` (odd).
pub fn stokes_factor_zero(ray: RayIndex, s: &StokesData) -> Result<CMat> {
    let st = StructureMatrices::new(s.rank);
    let qt = build_qtilde(ray, s)?;
    Ok(tilde_to_zero(&qt, &st))
}

fn tilde_to_zero(qt: &CMat, st: &StructureMatrices) -> CMat {
    let p = tilde_power(st.rank);
    st.d_pow(p) * qt * st.d_pow(-p)
}

fn tilde_power(rank: Rank) -> f64 {
    if rank.is_even() {
        0.5
    } else {
        -(rank.d() as f64)
    }
}

/// Stokes factor at `zeta = infinity`, `d^(-1) Q_k d`.
pub fn stokes_factor_inf(ray: RayIndex, s: &StokesData) -> Result<CMat> {
    let st = StructureMatrices::new(s.rank);
    let q = stokes_factor_zero(ray, s)?;
    Ok(st.d_pow(-1.0) * q * &st.d_mat)
}

/// All Stokes factors over one period `k in [1, 3)`.
#[derive(Clone, Debug)]
pub struct StokesFactorSet {
    pub rank: Rank,
    pub theta: BTreeMap<RayIndex, f64>,
    pub qt: BTreeMap<RayIndex, CMat>,
    pub support: BTreeMap<RayIndex, Vec<(usize, usize)>>,
}

impl StokesFactorSet {
    pub fn new(s: &StokesData) -> Result<Self> {
        let rank = s.rank;
        let n1 = rank.np1() as i64;
        let mut theta = BTreeMap::new();
        let mut qt = BTreeMap::new();
        let mut support = BTreeMap::new();
        for p in n1..3 * n1 {
            let ray = RayIndex::new(p, rank);
            theta.insert(ray, ray.theta());
            qt.insert(ray, build_qtilde(ray, s)?);
            support.insert(ray, ray_support(ray));
        }
        Ok(StokesFactorSet { rank, theta, qt, support })
    }

    /// `Q~_k` for any ray index, using the period 2.
    pub fn get(&self, ray: RayIndex) -> &CMat {
        let n1 = self.rank.np1() as i64;
        let p = (ray.p - n1).rem_euclid(2 * n1) + n1;
        &self.qt[&RayIndex::new(p, self.rank)]
    }
}

/// `M~ = Q~_1 Q~_(1+1/(n+1)) Pi^` (even) or `... Pi` (odd).
pub fn build_mtilde(s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let st = StructureMatrices::new(rank);
    let q1 = build_qtilde(RayIndex::new(n1, rank), s)?;
    let q2 = build_qtilde(RayIndex::new(n1 + 1, rank), s)?;
    Ok(q1 * q2 * st.monodromy_shift())
}

/// `M = Q_1 Q_(1+1/(n+1)) Pi` with the non-tilde factors.
pub fn monodromy_product(s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let st = StructureMatrices::new(rank);
    let q1 = stokes_factor_zero(RayIndex::new(n1, rank), s)?;
    let q2 = stokes_factor_zero(RayIndex::new(n1 + 1, rank), s)?;
    Ok(q1 * q2 * &st.pi)
}

/// Characteristic polynomial `[1, a_1, ..., a_N]` of `M~` predicted from `s`:
/// `a_i = s_i` (even) or `(-1)^i s_i` (odd).
pub fn expected_char_poly(s: &StokesData) -> Vec<f64> {
    let even = s.rank.is_even();
    s.s.iter()
        .enumerate()
        .map(|(i, v)| if even || i % 2 == 0 { *v } else { -v })
        .collect()
}

pub fn mtilde_char_poly(s: &StokesData) -> Result<Vec<C64>> {
    Ok(char_poly(&build_mtilde(s)?))
}

/// Recovers `m` from `s`: roots of `sum (-1)^i s_i mu^(N-i)` are `omega^(m'_j + n/2)`;
/// their arguments are lifted to a decreasing run of width `< n+1`.
pub fn invert_stokes(s: &StokesData) -> Result<Vec<f64>> {
    let rank = s.rank;
    let n1 = rank.np1();
    let n1f = n1 as f64;
    let n = rank.n() as f64;
    let coeffs: Vec<C64> = s
        .s
        .iter()
        .enumerate()
        .map(|(i, v)| c(if i % 2 == 0 { *v } else { -v }, 0.0))
        .collect();
    let roots = poly_roots(&coeffs)?;
    let mut frac = Vec::with_capacity(n1);
    for r in &roots {
        if (r.norm() - 1.0).abs() > 1e-8 {
            return Err(TodaError::InvalidInput(format!(
                "root {r} off the unit circle: s outside the image"
            )));
        }
        let y = (r.arg() * n1f / (2.0 * PI) - n / 2.0).rem_euclid(n1f);
        frac.push(y);
    }
    frac.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let target = -n * n1f / 2.0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..n1 {
        let lifted: Vec<f64> = (0..n1)
            .map(|q| {
                let idx = (r + q) % n1;
                frac[idx] + if r + q >= n1 { n1f } else { 0.0 }
            })
            .collect();
        let sum: f64 = lifted.iter().sum();
        let shifts = (target - sum) / (n1f * n1f);
        let err = (shifts - shifts.round()).abs();
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            let q = shifts.round() * n1f;
            best = Some((err, lifted.iter().map(|v| v + q).collect()));
        }
    }
    let (err, lifted) = best.expect("at least one rotation");
    if err > 1e-6 {
        return Err(TodaError::InvalidInput("no consistent lift of the root arguments".into()));
    }
    // lifted is increasing: m'_n < ... < m'_0
    let m: Vec<f64> = (0..n1).map(|j| lifted[n1 - 1 - j] + j as f64).collect();
    validate_m(rank, &m)?;
    Ok(antisymmetrize(&m))
}

/// `(n+1)^(m_(n-i) - m_i) prod_k Gamma((m'_(n-i) - m'_(n-i+k))/(n+1)) / Gamma((m'_i - m'_(i+k))/(n+1))`.
pub fn gamma_ratio(m: &[f64], i: usize) -> Result<f64> {
    let n1 = m.len();
    let n = n1 - 1;
    let n1f = n1 as f64;
    let j = n - i;
    let mut log_r = (m[j] - m[i]) * n1f.ln();
    let mut sign = 1.0;
    for k in 1..n1 as i64 {
        let num = (m_prime_ext(m, j as i64) - m_prime_ext(m, j as i64 + k)) / n1f;
        let den = (m_prime_ext(m, i as i64) - m_prime_ext(m, i as i64 + k)) / n1f;
        log_r += ln_gamma_abs(num)? - ln_gamma_abs(den)?;
        if gamma(num)? < 0.0 {
            sign = -sign;
        }
        if gamma(den)? < 0.0 {
            sign = -sign;
        }
    }
    Ok(sign * log_r.exp())
}

/// Eigenvalues `e_i` of `E_1 (E_1^id)^(-1)` from the gamma-product formula.
pub fn connection_eigs(data: &AsymptoticData) -> Result<Vec<f64>> {
    let n1 = data.rank.np1();
    (0..n1)
        .map(|i| Ok(data.chat[n1 - 1 - i] / data.chat[i] * gamma_ratio(&data.m, i)?))
        .collect()
}

/// The unique positive `c_hat` with all `e_i = 1`.
pub fn chat_id(m: &[f64], rank: Rank) -> Result<Vec<f64>> {
    validate_m(rank, m)?;
    let m = antisymmetrize(m);
    (0..rank.np1())
        .map(|i| {
            let l = gamma_ratio(&m, i)?;
            if !(l > 0.0) {
                return Err(TodaError::Domain(format!("gamma ratio {l} not positive")));
            }
            Ok(l.sqrt())
        })
        .collect()
}

/// Companion matrix with first column `-a_1, ..., -a_N` and ones above the diagonal.
pub fn companion(coeffs: &[C64]) -> CMat {
    let n = coeffs.len() - 1;
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = -coeffs[i + 1];
        if i + 1 < n {
            m[(i, i + 1)] = c(1.0, 0.0);
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct CompanionConjugator {
    pub f: CMat,
    pub residual: f64,
    /// Smallest singular value of the linear system; bounded away from 0 iff unique.
    pub min_singular: f64,
}

/// Solves `F M~ = Comp F` for `F = diag(L, U)`, with `L` unit lower triangular of
/// size `ceil(N/2)` and `U` unit upper triangular of size `floor(N/2)`.
pub fn companion_conjugator(mtilde: &CMat, rank: Rank) -> Result<CompanionConjugator> {
    let n1 = rank.np1();
    let nl = n1 - rank.d();
    let comp = companion(&char_poly(mtilde));
    let mut free = Vec::new();
    for i in 0..nl {
        for j in 0..i {
            free.push((i, j));
        }
    }
    for i in nl..n1 {
        for j in i + 1..n1 {
            free.push((i, j));
        }
    }
    let id = CMat::identity(n1, n1);
    let base = mtilde - &comp;
    let mut a = CMat::zeros(n1 * n1, free.len());
    for (col, &(i, j)) in free.iter().enumerate() {
        let mut e = CMat::zeros(n1, n1);
        e[(i, j)] = c(1.0, 0.0);
        let r = &e * mtilde - &comp * &e;
        for (row, v) in r.iter().enumerate() {
            a[(row, col)] = *v;
        }
    }
    let b = CVec::from_iterator(n1 * n1, base.iter().map(|v| -v));
    let min_singular = if free.is_empty() {
        f64::INFINITY
    } else {
        a.clone().svd(false, false).singular_values.min()
    };
    if min_singular < 1e-10 {
        return Err(TodaError::NonGeneric("companion conjugator not unique".into()));
    }
    let x = if free.is_empty() { CVec::zeros(0) } else { lstsq(&a, &b)? };
    let mut f = id;
    for (v, &(i, j)) in x.iter().zip(&free) {
        f[(i, j)] = *v;
    }
    let residual = max_abs_diff(&(&f * mtilde), &(&comp * &f));
    if residual > 1e-8 * (1.0 + max_abs(mtilde)) {
        return Err(TodaError::NonGeneric(format!("M~ not conjugate to companion form (residual {residual:e})")));
    }
    Ok(CompanionConjugator { f, residual, min_singular })
}

/// Connection-matrix layer built from `(m, c_hat)`.
#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub rank: Rank,
    pub kappa: C64,
    pub gamma_m: Vec<C64>,
    pub v_m: CMat,
    /// `P_m^T`, obtained from the companion conjugator.
    pub pm_t: CMat,
    /// The normalized-equation connection matrix, `D_1 h`.
    pub d1_cal: CMat,
    /// `D_1 t^m = D1_cal c_hat^(-1)`, independent of `t`.
    pub d1_tm: CMat,
    pub e: Vec<f64>,
    pub e1: CMat,
    pub e1_id: CMat,
    pub companion: CompanionConjugator,
}

impl ConnectionData {
    /// `D_1 = D1_cal h(t)^(-1)`.
    pub fn d1_at(&self, t: f64, data: &AsymptoticData) -> Result<CMat> {
        let h = h_of_t(t, data)?;
        Ok(&self.d1_cal * diag_real(&h.iter().map(|x| 1.0 / x).collect::<Vec<_>>()))
    }
}

pub fn kappa(rank: Rank) -> C64 {
    let n1 = rank.np1() as f64;
    I * (2.0 * PI).powf((n1 + 1.0) / 2.0) * n1.powf(-0.5)
}

/// `Gamma_m` diagonal: `(-1)^k 2 pi i (n+1)^(m_k) prod_l Gamma((m'_k - m'_(k+l))/(n+1))`.
pub fn gamma_m(data: &AsymptoticData) -> Result<Vec<C64>> {
    let n1 = data.rank.np1();
    let n1f = n1 as f64;
    (0..n1)
        .map(|k| {
            let mut log_p = data.m[k] * n1f.ln();
            let mut sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for l in 1..n1 as i64 {
                let arg = (data.m_prime_ext(k as i64) - data.m_prime_ext(k as i64 + l)) / n1f;
                log_p += ln_gamma_abs(arg)?;
                if gamma(arg)? < 0.0 {
                    sign = -sign;
                }
            }
            Ok(c(0.0, 2.0 * PI * sign) * log_p.exp())
        })
        .collect()
}

/// `(V_m)_(kj) = exp(i pi (1 - 2j/(n+1)) m'_k)`.
pub fn v_m(data: &AsymptoticData) -> CMat {
    let n1 = data.rank.np1();
    let n1f = n1 as f64;
    CMat::from_fn(n1, n1, |k, j| {
        C64::from_polar(1.0, PI * (1.0 - 2.0 * j as f64 / n1f) * data.m_prime[k])
    })
}

/// `P_m^T` from the companion conjugator: `d^(1/2) F d^(-1/2)` (even), `d^(-d) F d^d` (odd).
pub fn pm_transpose_from_f(f: &CMat, rank: Rank) -> CMat {
    let st = StructureMatrices::new(rank);
    let p = tilde_power(rank);
    st.d_pow(p) * f * st.d_pow(-p)
}

/// Independent route to `P_m^T`: the columns of `P_m^(-T)` are `M^(d-j) e_d`.
pub fn pm_transpose_krylov(s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    let n1 = rank.np1();
    let d = rank.d();
    let m = monodromy_product(s)?;
    let minv = inverse(&m, "monodromy product")?;
    let mut b = CMat::zeros(n1, n1);
    for j in 0..n1 {
        let step = if j < d { &m } else { &minv };
        let mut v = CVec::zeros(n1);
        v[d] = c(1.0, 0.0);
        for _ in 0..j.abs_diff(d) {
            v = step * v;
        }
        b.set_column(j, &v);
    }
    inverse(&b, "Krylov basis")
}

/// `E_1^id`: `C Q^inf_(n/(n+1)) / (n+1)` (even) or `C / (n+1)` (odd).
pub fn e1_identity(s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    let st = StructureMatrices::new(rank);
    let n1 = rank.np1();
    let scale = c(1.0 / n1 as f64, 0.0);
    if rank.is_even() {
        let q = stokes_factor_inf(RayIndex::new(rank.n() as i64, rank), s)?;
        Ok(&st.c_perm * q * scale)
    } else {
        Ok(&st.c_perm * scale)
    }
}

/// `E_1` from `D_1 t^m` through the reality relation between the connection matrices.
pub fn e1_from_d1(d1_tm: &CMat, s: &StokesData) -> Result<CMat> {
    let rank = s.rank;
    let st = StructureMatrices::new(rank);
    let n1 = rank.np1();
    let conj_inv = inverse(&d1_tm.map(|z| z.conj()), "conjugate of D_1 t^m")?;
    let mut e = d1_tm * &st.delta * conj_inv;
    if rank.is_even() {
        let q = stokes_factor_zero(RayIndex::new(rank.n() as i64, rank), s)?;
        e *= inverse(&q.map(|z| z.conj()), "conjugate Stokes factor")?;
    }
    Ok(e * st.d_pow(-1.0) * &st.c_perm * c(1.0 / n1 as f64, 0.0))
}

/// `E_1 = (V_m P_m^T)^(-1) diag(e) (V_m P_m^T) E_1^id`.
pub fn e1_from_eigs(v_m: &CMat, pm_t: &CMat, e: &[f64], e1_id: &CMat) -> Result<CMat> {
    let vp = v_m * pm_t;
    let vpi = inverse(&vp, "V_m P_m^T")?;
    Ok(vpi * diag_real(e) * vp * e1_id)
}

pub fn build_connection(data: &AsymptoticData) -> Result<ConnectionData> {
    let rank = data.rank;
    let s = stokes_params(data)?;
    let mtilde = build_mtilde(&s)?;
    let companion = companion_conjugator(&mtilde, rank)?;
    let pm_t = pm_transpose_from_f(&companion.f, rank);
    let kappa = kappa(rank);
    let gamma_m = gamma_m(data)?;
    let v_m = v_m(data);
    let bmat = diag(&gamma_m) * &v_m;
    let d1_cal = inverse(&pm_t, "P_m^T")? * kappa * inverse(&bmat, "Gamma_m V_m")?;
    let chat_inv: Vec<f64> = data.chat.iter().map(|x| 1.0 / x).collect();
    let d1_tm = &d1_cal * diag_real(&chat_inv);
    let e = connection_eigs(data)?;
    let e1_id = e1_identity(&s)?;
    let e1 = e1_from_d1(&d1_tm, &s)?;
    Ok(ConnectionData { rank, kappa, gamma_m, v_m, pm_t, d1_cal, d1_tm, e, e1, e1_id, companion })
}

#[derive(Clone, Debug, Serialize)]
pub struct GlobalCheck {
    pub connection_real: bool,
    pub stokes_real: bool,
    pub connection_defect: f64,
    pub stokes_defect: f64,
}

impl GlobalCheck {
    pub fn passes(&self) -> bool {
        self.connection_real && self.stokes_real
    }
}

fn delta_defect(v: &CMat) -> f64 {
    let n1 = v.nrows();
    let flipped = CMat::from_fn(n1, n1, |i, j| v[(n1 - 1 - i, n1 - 1 - j)].conj());
    max_abs_diff(&flipped, v)
}

/// Membership of `Omega D_1 t^m` and all `Omega Q_k Omega^(-1)` in the real form.
pub fn global_criterion(conn: &ConnectionData, data: &AsymptoticData, t: f64, tol: f64) -> Result<GlobalCheck> {
    let rank = data.rank;
    let st = StructureMatrices::new(rank);
    let h = h_of_t(t, data)?;
    let tm: Vec<f64> = data.m.iter().map(|m| t.powf(*m)).collect();
    let d1 = conn.d1_at(t, data)?;
    debug_assert!(h.len() == tm.len());
    let v = &st.fourier * d1 * diag_real(&tm);
    let connection_defect = delta_defect(&v);
    let s = stokes_params(data)?;
    let finv = inverse(&st.fourier, "Fourier matrix")?;
    let mut stokes_defect: f64 = 0.0;
    let n1 = rank.np1() as i64;
    for p in n1..3 * n1 {
        let q = stokes_factor_zero(RayIndex::new(p, rank), &s)?;
        stokes_defect = stokes_defect.max(delta_defect(&(&st.fourier * q * &finv)));
    }
    Ok(GlobalCheck {
        connection_real: is_sl_delta_real(&v, tol),
        stokes_real: stokes_defect <= tol,
        connection_defect,
        stokes_defect,
    })
}

/// `S^inf_k = Q^inf_k Q^inf_(k+1/(n+1)) ... Q^inf_(k+n/(n+1))`.
pub fn stokes_matrix_inf(start: RayIndex, s: &StokesData) -> Result<CMat> {
    let n1 = s.rank.np1();
    let mut out = CMat::identity(n1, n1);
    for q in 0..n1 as i64 {
        out *= stokes_factor_inf(start.shifted(q), s)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityReport {
    pub min_eig_first: f64,
    pub min_eig_second: f64,
    pub positive: bool,
}

/// Positive definiteness of `S + S^H` for the two Stokes matrices starting at
/// `k = 3/2` and `k = 5/2` (rounded up to the ray grid when `n+1` is odd).
pub fn positivity_region_test(s: &StokesData) -> Result<PositivityReport> {
    let rank = s.rank;
    let n1 = rank.np1() as i64;
    let mut mins = [0.0; 2];
    for (slot, num) in [3_i64, 5].iter().enumerate() {
        let p = (num * n1 + 1) / 2;
        let sm = stokes_matrix_inf(RayIndex::new(p, rank), s)?;
        let h = &sm + sm.adjoint();
        let ev = eigenvalues(&h)?;
        mins[slot] = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    }
    Ok(PositivityReport {
        min_eig_first: mins[0],
        min_eig_second: mins[1],
        positive: mins[0] > 0.0 && mins[1] > 0.0,
    })
}

/// `(1/2pi) int_0^inf exp(-x(l + 1/l)) dl/l`, returned divided by `exp(-2x)`.
///
/// With `l = e^u` the integrand is `exp(-2x(cosh u - 1))`, integrated by the
/// trapezoid rule until the doubly-exponential tail is below `1e-17`.
pub fn laplace_integral_scaled(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(TodaError::Domain(format!("x must be positive, got {x}")));
    }
    // 2x(cosh U - 1) = 40
    let umax = (1.0 + 40.0 / (2.0 * x)).acosh();
    let h = (umax / 400.0).min(0.5 / (2.0 * x).sqrt().max(1.0));
    let n = (umax / h).ceil() as usize;
    let mut sum = 0.5;
    for k in 1..=n {
        let u = k as f64 * h;
        sum += (-2.0 * x * (u.cosh() - 1.0)).exp();
    }
    Ok(sum * h / PI)
}

/// Relative error of the leading Laplace asymptotic `(1/2)(pi x)^(-1/2) e^(-2x)`.
pub fn laplace_relative_error(x: f64) -> Result<f64> {
    let q = laplace_integral_scaled(x)?;
    let asym = 0.5 / (PI * x).sqrt();
    Ok((q - asym).abs() / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn rank(n1: usize) -> Rank {
        Rank::new(n1).unwrap()
    }

    #[test]
    fn asymptotic_data_examples() {
        let inp = ModelInput::new(rank(2), vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let a = derive_asymptotic(&inp).unwrap();
        assert!((a.m[0] - 1.0 / 6.0).abs() < 1e-14);
        let z = t_of_z(c(1.0, 0.0), &a).unwrap();
        assert!((z - 2.0 / 3.0).abs() < 1e-14);

        let inp = ModelInput::new(rank(3), vec![1.0; 3], vec![1.0, 0.0, 0.0]).unwrap();
        let a = derive_asymptotic(&inp).unwrap();
        assert!((a.m[0] + 0.25).abs() < 1e-14);

        let inp = ModelInput::new(rank(5), vec![1.0; 5], vec![0.0; 5]).unwrap();
        let a = derive_asymptotic(&inp).unwrap();
        assert!(a.m.iter().all(|m| m.abs() < 1e-15));
        assert!((t_of_z(c(2.5, 0.0), &a).unwrap() - 2.5).abs() < 1e-14);
        assert!(t_of_z(c(-1.0, 0.0), &a).is_err());
        assert!(ModelInput::new(rank(2), vec![1.0, 1.0], vec![-1.0, 0.0]).is_err());
        assert!(ModelInput::new(rank(3), vec![1.0, 2.0, 1.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn asymptotic_recurrences_hold() {
        let inp = ModelInput::new(rank(4), vec![0.7, 2.0, 1.3, 2.0], vec![0.5, 1.5, -0.3, 1.5]).unwrap();
        let a = derive_asymptotic(&inp).unwrap();
        let n1 = 4;
        for i in 0..n1 {
            let im = (i + n1 - 1) % n1;
            let lhs = a.m[im] - a.m[i];
            assert!((lhs - (-1.0 + 4.0 * (inp.k[i] + 1.0) / a.n_total)).abs() < 1e-12);
            let ratio = a.chat[im] / a.chat[i];
            let want = (4.0 / a.n_total).powf(a.m[i] - a.m[im]) * inp.c[i] * a.c_prod.powf(-(inp.k[i] + 1.0) / a.n_total);
            assert!((ratio - want).abs() < 1e-12 * want);
            assert!((a.chat[i] * a.chat[n1 - 1 - i] - 1.0).abs() < 1e-12);
            assert_eq!(a.m[i], -a.m[n1 - 1 - i]);
        }
    }

    #[test]
    fn stokes_examples() {
        let a = AsymptoticData::from_m(rank(2), &[1.0 / 6.0, -1.0 / 6.0], None).unwrap();
        let s = stokes_params(&a).unwrap();
        assert!((s.s[1] + 1.0).abs() < 1e-13);
        let a = AsymptoticData::from_m(rank(3), &[0.0; 3], None).unwrap();
        assert!(stokes_params(&a).unwrap().s[1].abs() < 1e-13);
        let a = AsymptoticData::from_m(rank(3), &[0.2, 0.0, -0.2], None).unwrap();
        let want = 1.0 + 2.0 * (2.0 * PI * 1.2 / 3.0).cos();
        assert!((stokes_params(&a).unwrap().s[1] - want).abs() < 1e-13);
    }

    #[test]
    fn support_examples() {
        let r4 = rank(4);
        assert_eq!(ray_support(RayIndex::new(4, r4)), vec![(1, 0), (2, 3)]);
        let r2 = rank(2);
        for p in [2, 4, 6, -2] {
            assert!(ray_support(RayIndex::new(p, r2)).is_empty());
        }
        assert_eq!(ray_support(RayIndex::new(3, r2)), vec![(0, 1)]);
        for n1 in 2..=9 {
            let r = rank(n1);
            for p in 0..(2 * n1 as i64) {
                let a = RayIndex::new(p, r);
                assert_eq!(ray_support(a), ray_support(a.shifted(2 * n1 as i64)));
            }
        }
    }

    #[test]
    fn qtilde_examples() {
        let r2 = rank(2);
        let s = StokesData::from_essential(r2, &[0.7]).unwrap();
        let q = build_qtilde(RayIndex::from_parts(1, 1, r2), &s).unwrap();
        let want = CMat::from_row_slice(2, 2, &[c(1., 0.), c(0.7, 0.), c(0., 0.), c(1., 0.)]);
        assert!(max_abs_diff(&q, &want) < 1e-15);
        let r3 = rank(3);
        let s = StokesData::from_essential(r3, &[0.4]).unwrap();
        let q = build_qtilde(RayIndex::new(3, r3), &s).unwrap();
        let mut want = CMat::identity(3, 3);
        want[(1, 0)] = c(0.4, 0.0);
        assert!(max_abs_diff(&q, &want) < 1e-15);
    }

    #[test]
    fn mtilde_examples() {
        let sv = 0.3;
        let m2 = build_mtilde(&StokesData::from_essential(rank(2), &[sv]).unwrap()).unwrap();
        let want = CMat::from_row_slice(2, 2, &[c(-sv, 0.), c(1., 0.), c(-1., 0.), c(0., 0.)]);
        assert!(max_abs_diff(&m2, &want) < 1e-15);
        let m3 = build_mtilde(&StokesData::from_essential(rank(3), &[sv]).unwrap()).unwrap();
        let want = CMat::from_row_slice(
            3,
            3,
            &[c(0., 0.), c(1., 0.), c(0., 0.), c(-sv, 0.), c(sv, 0.), c(1., 0.), c(1., 0.), c(0., 0.), c(0., 0.)],
        );
        assert!(max_abs_diff(&m3, &want) < 1e-15);
    }

    #[test]
    fn invert_examples() {
        let m = invert_stokes(&StokesData::from_essential(rank(2), &[-1.0]).unwrap()).unwrap();
        assert!((m[0] - 1.0 / 6.0).abs() < 1e-12);
        for n1 in 2..=7 {
            let m = invert_stokes(&StokesData::zero(rank(n1))).unwrap();
            assert!(m.iter().all(|v| v.abs() < 1e-10), "n+1={n1}: {m:?}");
        }
        assert!(invert_stokes(&StokesData::from_essential(rank(2), &[-3.0]).unwrap()).is_err());
    }

    #[test]
    fn chat_id_gives_unit_eigs() {
        let m = [0.3, 0.1, -0.1, -0.3];
        let ch = chat_id(&m, rank(4)).unwrap();
        let a = AsymptoticData::from_m(rank(4), &m, Some(&ch)).unwrap();
        for e in connection_eigs(&a).unwrap() {
            assert!((e - 1.0).abs() < 1e-12);
        }
        let a0 = AsymptoticData::from_m(rank(3), &[0.0; 3], Some(&[2.0, 1.0, 0.5])).unwrap();
        let e = connection_eigs(&a0).unwrap();
        assert!((e[0] - 0.25).abs() < 1e-14 && (e[2] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn two_by_two_pm_is_identity() {
        let a = AsymptoticData::from_m(rank(2), &[0.2, -0.2], None).unwrap();
        let conn = build_connection(&a).unwrap();
        assert!(max_abs_diff(&conn.pm_t, &CMat::identity(2, 2)) < 1e-13);
    }

    #[test]
    fn laplace_small_table() {
        for &x in &[5.0, 10.0, 50.0, 100.0] {
            let r = laplace_relative_error(x).unwrap();
            assert!(r <= 1.5 / x, "x={x}: {r}");
            assert!(r > 0.0);
        }
    }

    fn sample_m(n1: usize, seed: u64) -> Vec<f64> {
        // decreasing anti-symmetric m with gaps in (-1, 1)
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let half = n1 / 2;
        let mut m = vec![0.0; n1];
        let mut acc = 0.0;
        for i in (0..half).rev() {
            acc += 0.1 + 0.5 * next() / n1 as f64;
            m[i] = acc;
            m[n1 - 1 - i] = -acc;
        }
        m
    }

    #[test]
    fn connection_relations_both_routes() {
        for n1 in 2..=6 {
            let r = rank(n1);
            let st = StructureMatrices::new(r);
            for seed in 0..3 {
                let m = sample_m(n1, seed + 10 * n1 as u64);
                let half: Vec<f64> = (0..n1).map(|i| 0.6 + 0.3 * ((i * 7 + seed as usize) % 5) as f64).collect();
                let mut ch = vec![1.0; n1];
                for i in 0..n1 {
                    if i < n1 - 1 - i {
                        ch[i] = half[i];
                        ch[n1 - 1 - i] = 1.0 / half[i];
                    }
                }
                let a = AsymptoticData::from_m(r, &m, Some(&ch)).unwrap();
                let s = stokes_params(&a).unwrap();
                let conn = build_connection(&a).unwrap();
                let b = e1_from_eigs(&conn.v_m, &conn.pm_t, &conn.e, &conn.e1_id).unwrap();
                assert!(max_abs_diff(&conn.e1, &b) < 1e-9, "n+1={n1} routes");
                let kry = pm_transpose_krylov(&s).unwrap();
                assert!(max_abs_diff(&kry, &conn.pm_t) < 1e-9, "n+1={n1} P_m");
                let mm = monodromy_product(&s).unwrap();
                let w: Vec<C64> = a.m_prime.iter().map(|x| r.omega_pow(*x)).collect();
                let rhs = &conn.d1_cal * diag(&w) * inverse(&conn.d1_cal, "").unwrap();
                assert!(max_abs_diff(&mm, &rhs) < 1e-9, "n+1={n1} D-cyc");
                let p = r.np1() as i64;
                let qi1 = stokes_factor_inf(RayIndex::new(p, r), &s).unwrap();
                let qi2 = stokes_factor_inf(RayIndex::new(p + 1, r), &s).unwrap();
                let cyc = &mm * &conn.e1 * qi1 * qi2 * &st.pi;
                assert!(max_abs_diff(&conn.e1, &cyc) < 1e-9, "n+1={n1} E-cyc");
                let det = crate::linalg::determinant(&conn.e1);
                let want = crate::linalg::determinant(&(&st.c_perm * c(1.0 / n1 as f64, 0.0)));
                assert!((det - want).norm() < 1e-10);
                for (i, e) in conn.e.iter().enumerate() {
                    assert!((e * conn.e[n1 - 1 - i] - 1.0).abs() < 1e-10);
                }
                let t = 0.7;
                assert!(!global_criterion(&conn, &a, t, 1e-8).unwrap().connection_real);
                let aid = a.with_chat(chat_id(&m, r).unwrap());
                let cid = build_connection(&aid).unwrap();
                let g = global_criterion(&cid, &aid, t, 1e-8).unwrap();
                assert!(g.passes(), "n+1={n1}: {g:?}");
                assert!(max_abs_diff(&cid.e1, &cid.e1_id) < 1e-9);
            }
        }
    }
}
