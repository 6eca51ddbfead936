//! Asymptotic data read off a radial solution at both ends.
//!
//! Near the origin each `w_i` behaves like `-m_i log x - log c_i`; far out the
//! sine projections `W_p = sum_{i<d} w_i sin((2i+1) p pi / N)` decay like
//! `-(N/8) s_p (pi L_p x)^(-1/2) e^(-2 L_p x)` with `L_p = 2 sin(p pi / N)`.
//! The fits below recover `m`, `c` and `s_p` from a [`RadialSolution`] so they
//! can be compared with the closed forms in [`crate::spectral`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{Rank, StructureMatrices};
use crate::error::{Result, TodaError};
use crate::linalg::{c, diag_real, inverse, CMat, C64};
use crate::spectral::{self, AsymptoticData};
use crate::toda_solver::{assemble_tt_toda, solve_bvp, RadialSolution, SolverOptions, TodaReduction};

const MIN_WINDOW_NODES: usize = 20;

/// Real weighted least squares with per-parameter standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct Regression {
    pub coef: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Weighted root-mean-square residual.
    pub rms: f64,
    pub rank: usize,
}

/// Minimises `sum_j weight_j (y_j - sum_k coef_k cols_k[j])^2` by SVD after
/// scaling each column to unit norm.
pub fn regress(cols: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Result<Regression> {
    let rows = y.len();
    let k = cols.len();
    if rows <= k {
        return Err(TodaError::InvalidInput(format!("{rows} samples for {k} parameters")));
    }
    let sw: Vec<f64> = (0..rows).map(|j| weights.map_or(1.0, |w| w[j].sqrt())).collect();
    let mut a = DMatrix::from_fn(rows, k, |j, q| cols[q][j] * sw[j]);
    let mut scale = vec![1.0; k];
    for q in 0..k {
        let nrm = a.column(q).norm();
        if nrm > 0.0 {
            scale[q] = nrm;
            a.column_mut(q).scale_mut(1.0 / nrm);
        }
    }
    let b = DVector::from_fn(rows, |j, _| y[j] * sw[j]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-13 * rows as f64;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let x = svd
        .solve(&b, cutoff)
        .map_err(|e| TodaError::Singular(format!("least squares: {e}")))?;
    let resid = &b - &a * &x;
    let wsum: f64 = (0..rows).map(|j| sw[j] * sw[j]).sum();
    let rss = resid.norm_squared();
    let sigma2 = rss / (rows - k) as f64;
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut stderr = vec![0.0; k];
    for q in 0..k {
        let mut var = 0.0;
        for (l, sv) in svd.singular_values.iter().enumerate() {
            if *sv > cutoff {
                var += (v_t[(l, q)] / sv).powi(2);
            }
        }
        stderr[q] = (sigma2 * var).sqrt() / scale[q];
    }
    Ok(Regression {
        coef: (0..k).map(|q| x[q] / scale[q]).collect(),
        stderr,
        rms: (rss / wsum).sqrt(),
        rank,
    })
}

/// Origin fit: `u_i ~ gamma_i s + beta_i` on a window near `s_min`, converted to
/// `w_i(x) ~ -m_i log x + const_i`.
#[derive(Clone, Debug, Serialize)]
pub struct OriginFit {
    /// Fitted log-slopes of the solved unknowns (compare with the imposed `gamma`).
    pub gamma_fit: Vec<f64>,
    pub gamma_stderr: Vec<f64>,
    /// Fitted `m_i = -gamma_i / 2`.
    pub m_fit: Vec<f64>,
    /// Estimates of `-log c_i` for `i < d`.
    pub const_fit: Vec<f64>,
    pub const_stderr: Vec<f64>,
    pub window: (f64, f64),
    pub nodes: usize,
    /// Correction exponents included in the regression basis.
    pub exponents: Vec<f64>,
}

/// The first decade of the grid.
pub fn default_origin_window(sol: &RadialSolution) -> (f64, f64) {
    let s0 = sol.grid[0];
    (s0, s0 + 10f64.ln())
}

fn window_nodes(grid: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    (0..grid.len()).filter(|&j| grid[j] >= lo - tol && grid[j] <= hi + tol).collect()
}

/// Regresses each `u_i` on `{1, s, e^{k s}}` over `window` (in `s = log r`),
/// with `k` the correction exponents below 3.
pub fn fit_origin(red: &TodaReduction, sol: &RadialSolution, window: (f64, f64)) -> Result<OriginFit> {
    let idx = window_nodes(&sol.grid, window.0, window.1);
    if idx.len() < MIN_WINDOW_NODES {
        return Err(TodaError::InvalidInput(format!(
            "origin window [{}, {}] holds {} nodes, need {MIN_WINDOW_NODES}",
            window.0,
            window.1,
            idx.len()
        )));
    }
    let mut exponents: Vec<f64> = Vec::new();
    for k in red.problem.origin_exponents() {
        if k > 0.05 && k < 3.0 && exponents.iter().all(|e| (e - k).abs() > 1e-6) {
            exponents.push(k);
        }
    }
    let s: Vec<f64> = idx.iter().map(|&j| sol.grid[j]).collect();
    let mut cols = vec![vec![1.0; s.len()], s.clone()];
    for k in &exponents {
        cols.push(s.iter().map(|v| (k * v).exp()).collect());
    }
    let ln2 = 2f64.ln();
    let mut fit = OriginFit {
        gamma_fit: vec![],
        gamma_stderr: vec![],
        m_fit: vec![],
        const_fit: vec![],
        const_stderr: vec![],
        window,
        nodes: idx.len(),
        exponents: exponents.clone(),
    };
    for i in 0..sol.u.nrows() {
        let y: Vec<f64> = idx.iter().map(|&j| sol.u[(i, j)]).collect();
        let r = regress(&cols, &y, None)?;
        let slope = r.coef[1];
        let m = -slope / 2.0;
        // u(s) = 2 w(e^s / 2) = -2 m s + 2 m log 2 + 2 const
        fit.gamma_fit.push(slope);
        fit.gamma_stderr.push(r.stderr[1]);
        fit.m_fit.push(m);
        fit.const_fit.push(r.coef[0] / 2.0 - m * ln2);
        fit.const_stderr.push(0.5 * r.stderr[0] + ln2 * 0.5 * r.stderr[1]);
    }
    Ok(fit)
}

/// `w` on all `N` indices from `w_0..w_{d-1}` via `w_i + w_{n-i} = 0`.
pub fn extend_antisymmetric(half: &[f64], rank: Rank) -> Result<Vec<f64>> {
    let d = rank.d();
    if half.len() != d {
        return Err(TodaError::DimensionMismatch { expected: d, got: half.len() });
    }
    let n1 = rank.np1();
    let mut w = vec![0.0; n1];
    for i in 0..d {
        w[i] = half[i];
        w[n1 - 1 - i] = -half[i];
    }
    Ok(w)
}

/// Decay rate `L_p = 2 sin(p pi / N)`.
pub fn decay_rate(p: usize, rank: Rank) -> f64 {
    2.0 * (p as f64 * PI / rank.np1() as f64).sin()
}

fn sine_weight(i: usize, p: usize, rank: Rank) -> f64 {
    ((2 * i + 1) as f64 * p as f64 * PI / rank.np1() as f64).sin()
}

/// `W_p = sum_{i<d} w_i sin((2i+1) p pi / N)`.
pub fn mode_projection(w: &[f64], p: usize, rank: Rank) -> f64 {
    (0..rank.d()).map(|i| w[i] * sine_weight(i, p, rank)).sum()
}

/// The `d x d` sine matrix mapping `w_0..w_{d-1}` to `W_1..W_d`.
pub fn sine_matrix(rank: Rank) -> DMatrix<f64> {
    let d = rank.d();
    DMatrix::from_fn(d, d, |p, i| sine_weight(i, p + 1, rank))
}

/// Inverts [`mode_projection`]: recovers `w_0..w_{d-1}` from `W_1..W_d`.
pub fn w_from_modes(modes: &[f64], rank: Rank) -> Result<Vec<f64>> {
    let d = rank.d();
    if modes.len() != d {
        return Err(TodaError::DimensionMismatch { expected: d, got: modes.len() });
    }
    let lu = sine_matrix(rank).lu();
    let x = lu
        .solve(&DVector::from_column_slice(modes))
        .ok_or_else(|| TodaError::Singular("sine projection".into()))?;
    Ok(x.iter().cloned().collect())
}

/// Closed form `hat w_p = (4 i / N) W_p`, `p = 0..n` (with `hat w_0 = 0`).
/// `w` is the full antisymmetric vector of length `N`.
pub fn hatw_transform(w: &[f64], rank: Rank) -> Result<Vec<C64>> {
    let n1 = rank.np1();
    if w.len() != n1 {
        return Err(TodaError::DimensionMismatch { expected: n1, got: w.len() });
    }
    let k = 4.0 / n1 as f64;
    Ok((0..n1)
        .map(|p| if p == 0 { c(0.0, 0.0) } else { c(0.0, k * mode_projection(w, p, rank)) })
        .collect())
}

/// `d^(1/2) F diag(-2w) F^(-1) d^(-1/2)` with `F` the Fourier matrix.
pub fn hatw_matrix(w: &[f64], rank: Rank) -> Result<CMat> {
    let n1 = rank.np1();
    if w.len() != n1 {
        return Err(TodaError::DimensionMismatch { expected: n1, got: w.len() });
    }
    let sm = StructureMatrices::new(rank);
    let minus2w: Vec<f64> = w.iter().map(|v| -2.0 * v).collect();
    let f_inv = inverse(&sm.fourier, "Fourier matrix")?;
    let half_inv = sm.d_pow(-0.5);
    Ok(&sm.half_d * &sm.fourier * diag_real(&minus2w) * f_inv * half_inv)
}

/// Coefficients of `hat w_0 + hat w_1 Pi_hat + ... + hat w_n Pi_hat^n`, read off
/// the first row (where `Pi_hat^p` has its single entry `+1` in column `p`).
pub fn hatw_from_matrix(m: &CMat) -> Vec<C64> {
    (0..m.ncols()).map(|p| m[(0, p)]).collect()
}

/// Max entry of `hatw_matrix(w) - sum_p hat w_p Pi_hat^p` with the closed-form
/// coefficients.
pub fn hatw_expansion_residual(w: &[f64], rank: Rank) -> Result<f64> {
    let m = hatw_matrix(w, rank)?;
    let coeffs = hatw_transform(w, rank)?;
    let sm = StructureMatrices::new(rank);
    let n1 = rank.np1();
    let mut acc = CMat::zeros(n1, n1);
    let mut pw = CMat::identity(n1, n1);
    for cp in &coeffs {
        acc += &pw * *cp;
        pw = &pw * &sm.pi_hat;
    }
    Ok((m - acc).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `(1/2pi) int_0^inf e^{-x L (l + 1/l)} dl/l` (the per-mode jump integral).
pub fn jump_integral(lx: f64) -> Result<f64> {
    Ok(spectral::laplace_integral_scaled(lx)? * (-2.0 * lx).exp())
}

/// `I - i sum_{p=1}^{n} s_p B_p(x) Pi_hat^p` with `B_p = jump_integral(L_p x)`,
/// `s` given as the full vector `s_0..s_N`; entries of `s` whose folded index
/// `min(p, N-p)` is not in `keep` are dropped.
pub fn first_order_jump_sum(s: &[f64], x: f64, rank: Rank, keep: &dyn Fn(usize) -> bool) -> Result<CMat> {
    let n1 = rank.np1();
    if s.len() != n1 + 1 {
        return Err(TodaError::DimensionMismatch { expected: n1 + 1, got: s.len() });
    }
    let sm = StructureMatrices::new(rank);
    let mut acc = CMat::identity(n1, n1);
    let mut pw = CMat::identity(n1, n1);
    for p in 1..n1 {
        pw = &pw * &sm.pi_hat;
        if !keep(p.min(n1 - p)) || s[p] == 0.0 {
            continue;
        }
        let b = jump_integral(decay_rate(p, rank) * x)?;
        acc += &pw * c(0.0, -s[p] * b);
    }
    Ok(acc)
}

/// Principal logarithm of a matrix close to the identity, by its power series.
pub fn log_near_identity(g: &CMat) -> Result<CMat> {
    let n = g.nrows();
    let a = g - CMat::identity(n, n);
    let na = a.norm();
    if na >= 0.5 {
        return Err(TodaError::Domain(format!("matrix too far from the identity for the series (|A| = {na:.3})")));
    }
    let mut term = a.clone();
    let mut out = a.clone();
    for k in 2..200 {
        term = &term * &a;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        out += &term * c(sign / k as f64, 0.0);
        if term.norm() / (k as f64) < 1e-18 * out.norm().max(1e-300) {
            break;
        }
    }
    Ok(out)
}

/// `W_1..W_d` implied by `-2w = log(first-order jump sum)` under the
/// `hat w` expansion, including the nonlinear cross terms between modes.
pub fn modes_from_jump_sum(g: &CMat, rank: Rank) -> Result<Vec<f64>> {
    let log = log_near_identity(g)?;
    let n1 = rank.np1() as f64;
    Ok((1..=rank.d()).map(|p| (log[(0, p)] / c(0.0, 4.0 / n1)).re).collect())
}

/// How the far-field fit chooses its samples.
#[derive(Clone, Debug, Serialize)]
pub enum FarWindow {
    /// Longest contiguous run with `floor <= |W_p| <= ceiling`, clear of the
    /// outer boundary.
    Adaptive { floor: f64, ceiling: f64 },
    /// One `x`-interval per mode `p = 1..d`.
    Fixed(Vec<(f64, f64)>),
}

impl Default for FarWindow {
    fn default() -> Self {
        FarWindow::Adaptive { floor: 1e-9, ceiling: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeFit {
    pub p: usize,
    pub decay: f64,
    pub s_fit: f64,
    pub stderr: f64,
    /// Coefficient of the `1/x` correction in the rescaled variable.
    pub subleading: f64,
    /// `x`-interval used (empty when unresolved).
    pub window: (f64, f64),
    pub nodes: usize,
    /// Weighted rms residual of the constant-only model.
    pub rms_leading: f64,
    /// Weighted rms residual with the `1/x` correction.
    pub rms_with_subleading: f64,
    /// `false` when `|W_p|` never rises above the floor; `s_fit` is then 0.
    pub resolved: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FarFieldFit {
    pub modes: Vec<ModeFit>,
    /// Numerical rank of the sine projection (always `d` in exact arithmetic).
    pub projection_rank: usize,
}

impl FarFieldFit {
    pub fn s_fit(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.s_fit).collect()
    }
}

/// `W_p` at every node, with `x = e^s / 2` and `w_i = u_i / 2`.
pub fn mode_profile(sol: &RadialSolution, p: usize, rank: Rank) -> (Vec<f64>, Vec<f64>) {
    let nodes = sol.grid.len();
    let x: Vec<f64> = sol.grid.iter().map(|s| 0.5 * s.exp()).collect();
    let wp: Vec<f64> = (0..nodes)
        .map(|j| (0..rank.d()).map(|i| 0.5 * sol.u[(i, j)] * sine_weight(i, p, rank)).sum())
        .collect();
    (x, wp)
}

fn adaptive_run(x: &[f64], wp: &[f64], decay: f64, floor: f64, ceiling: f64) -> Option<(usize, usize)> {
    let x_end = *x.last().expect("non-empty grid");
    let ok = |j: usize| {
        let a = wp[j].abs();
        // the outer Dirichlet condition reflects a relative e^{-4 L (X - x)}
        x[j] >= 0.5 && a >= floor && a <= ceiling && 4.0 * decay * (x_end - x[j]) >= 9.2
    };
    let mut best: Option<(usize, usize)> = None;
    let mut j = 0;
    while j < x.len() {
        if ok(j) {
            let start = j;
            while j < x.len() && ok(j) {
                j += 1;
            }
            if best.map_or(true, |(a, b)| j - start > b - a) {
                best = Some((start, j));
            }
        } else {
            j += 1;
        }
    }
    best
}

/// Rates `2(L_q + L_r) - 2 L_p` (below 3) at which quadratic products of two
/// slower modes leak into the rescaled `W_p`.
pub fn cross_exponents(p: usize, rank: Rank) -> Vec<f64> {
    let lp = decay_rate(p, rank);
    let mut out: Vec<f64> = Vec::new();
    for q in 1..p {
        for r in q..p {
            let delta = 2.0 * (decay_rate(q, rank) + decay_rate(r, rank)) - 2.0 * lp;
            if delta > -1e-9 && delta < 3.0 && out.iter().all(|e| (e - delta).abs() > 1e-6) {
                out.push(delta.max(0.0));
            }
        }
    }
    out
}

fn fit_mode(x: &[f64], wp: &[f64], p: usize, rank: Rank, lo: usize, hi: usize) -> Result<ModeFit> {
    let decay = decay_rate(p, rank);
    let n1 = rank.np1() as f64;
    let xs = &x[lo..hi];
    let y: Vec<f64> = (lo..hi)
        .map(|j| wp[j] * (PI * decay * x[j]).sqrt() * (2.0 * decay * x[j]).exp() / (-n1 / 8.0))
        .collect();
    // nodes are uniform in log x; weight by x to sample uniformly in x
    let weights: Vec<f64> = xs.to_vec();
    let ones = vec![1.0; xs.len()];
    let inv: Vec<f64> = xs.iter().map(|v| 1.0 / v).collect();
    let mut cols = vec![ones.clone(), inv];
    for delta in cross_exponents(p, rank) {
        cols.push(xs.iter().map(|v| (-delta * v).exp() / v.sqrt()).collect());
    }
    let full = regress(&cols, &y, Some(&weights))?;
    let lead = regress(&[ones], &y, Some(&weights))?;
    Ok(ModeFit {
        p,
        decay,
        s_fit: full.coef[0],
        stderr: full.stderr[0],
        subleading: full.coef[1],
        window: (xs[0], xs[xs.len() - 1]),
        nodes: xs.len(),
        rms_leading: lead.rms,
        rms_with_subleading: full.rms,
        resolved: true,
    })
}

/// Fits `s_1..s_d` from the far field, one sine mode at a time in order of
/// increasing decay rate. Each rescaled `W_p` is regressed on `{1, 1/x}` plus
/// one `x^(-1/2) e^(-delta x)` column per quadratic leak from slower modes.
pub fn fit_stokes_far_field(red: &TodaReduction, sol: &RadialSolution, window: &FarWindow) -> Result<FarFieldFit> {
    let rank = red.rank;
    let d = rank.d();
    if let FarWindow::Fixed(w) = window {
        if w.len() != d {
            return Err(TodaError::DimensionMismatch { expected: d, got: w.len() });
        }
    }
    let sv = sine_matrix(rank).singular_values();
    let projection_rank = sv.iter().filter(|s| **s > 1e-12 * sv.max()).count();
    let mut modes = Vec::with_capacity(d);
    for p in 1..=d {
        let decay = decay_rate(p, rank);
        let (x, wp) = mode_profile(sol, p, rank);
        let run = match window {
            FarWindow::Adaptive { floor, ceiling } => match adaptive_run(&x, &wp, decay, *floor, *ceiling) {
                Some((a, b)) if b - a >= MIN_WINDOW_NODES => (a, b),
                _ => {
                    let peak = x
                        .iter()
                        .zip(&wp)
                        .filter(|(xv, _)| **xv >= 0.5)
                        .map(|(_, v)| v.abs())
                        .fold(0.0, f64::max);
                    if peak < *floor {
                        modes.push(ModeFit {
                            p,
                            decay,
                            s_fit: 0.0,
                            stderr: 0.0,
                            subleading: 0.0,
                            window: (0.0, 0.0),
                            nodes: 0,
                            rms_leading: 0.0,
                            rms_with_subleading: 0.0,
                            resolved: false,
                        });
                        continue;
                    }
                    return Err(TodaError::InvalidInput(format!(
                        "no far-field window for mode {p} with {floor:e} <= |W| <= {ceiling:e}; extend the domain \
                         (larger s_max) or refine the grid"
                    )));
                }
            },
            FarWindow::Fixed(w) => {
                let (x0, x1) = w[p - 1];
                let idx: Vec<usize> = (0..x.len()).filter(|&j| x[j] >= x0 && x[j] <= x1).collect();
                if idx.len() < MIN_WINDOW_NODES {
                    return Err(TodaError::InvalidInput(format!(
                        "far-field window [{x0}, {x1}] for mode {p} holds {} nodes; extend the domain",
                        idx.len()
                    )));
                }
                (idx[0], idx[idx.len() - 1] + 1)
            }
        };
        modes.push(fit_mode(&x, &wp, p, rank, run.0, run.1)?);
    }
    Ok(FarFieldFit { modes, projection_rank })
}

/// Both ends of one solution.
#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub gamma_fit: Vec<f64>,
    pub const_fit: Vec<f64>,
    pub s_fit: Vec<f64>,
    /// Origin window in `s = log r`, then one `x`-window per mode.
    pub fit_windows: Vec<(f64, f64)>,
    /// `gamma`, then `const`, then `s` uncertainties.
    pub stderr: Vec<f64>,
}

pub fn fit_both_ends(red: &TodaReduction, sol: &RadialSolution) -> Result<FitResult> {
    let origin = fit_origin(red, sol, default_origin_window(sol))?;
    let far = fit_stokes_far_field(red, sol, &FarWindow::default())?;
    let mut fit_windows = vec![origin.window];
    fit_windows.extend(far.modes.iter().map(|m| m.window));
    let mut stderr = origin.gamma_stderr.clone();
    stderr.extend(&origin.const_stderr);
    stderr.extend(far.modes.iter().map(|m| m.stderr));
    Ok(FitResult { gamma_fit: origin.gamma_fit, const_fit: origin.const_fit, s_fit: far.s_fit(), fit_windows, stderr })
}

/// Pass/fail budgets for [`connection_problem_report`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReportTolerances {
    /// Relative error on `s_p`, measured against `max(|s_p|, 0.1)`.
    pub s_rel: f64,
    /// Absolute error on `log c_i`.
    pub log_chat_abs: f64,
    /// Absolute error on the origin slopes.
    pub gamma_abs: f64,
}

impl ReportTolerances {
    pub fn for_rank(rank: Rank) -> Self {
        ReportTolerances { s_rel: if rank.np1() <= 3 { 0.02 } else { 0.03 }, log_chat_abs: 1e-2, gamma_abs: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub quantity: String,
    pub closed_form: f64,
    pub fitted: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectionReport {
    pub rank: Rank,
    pub m: Vec<f64>,
    pub converged: bool,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub rows: Vec<ReportRow>,
    pub all_pass: bool,
}

fn row(quantity: String, closed_form: f64, fitted: f64, error: f64, tolerance: f64) -> ReportRow {
    ReportRow { quantity, closed_form, fitted, error, tolerance, pass: error <= tolerance }
}

/// Solves the radial problem for `m` and compares the fitted asymptotic data
/// with the closed-form Stokes parameters and `c^id`.
pub fn connection_problem_report(
    rank: Rank,
    m: &[f64],
    opts: &SolverOptions,
    tol: &ReportTolerances,
) -> Result<ConnectionReport> {
    let data = AsymptoticData::from_m(rank, m, None)?;
    let stokes = spectral::stokes_params(&data)?;
    let chat = spectral::chat_id(m, rank)?;
    let red = assemble_tt_toda(rank, m)?;
    let sol = solve_bvp(&red.problem, opts)?;
    let origin = fit_origin(&red, &sol, default_origin_window(&sol))?;
    let far = fit_stokes_far_field(&red, &sol, &FarWindow::default())?;
    let mut rows = Vec::new();
    for (i, g) in red.problem.gamma.iter().enumerate() {
        let f = origin.gamma_fit[i];
        rows.push(row(format!("gamma_{}", i + 1), *g, f, (f - g).abs(), tol.gamma_abs));
    }
    for i in 0..rank.d() {
        let cf = -chat[i].ln();
        let f = origin.const_fit[i];
        rows.push(row(format!("-log c_{i}"), cf, f, (f - cf).abs(), tol.log_chat_abs));
    }
    for (p, mf) in far.modes.iter().enumerate() {
        let cf = stokes.essential()[p];
        let err = (mf.s_fit - cf).abs() / cf.abs().max(0.1);
        rows.push(row(format!("s_{}", p + 1), cf, mf.s_fit, err, tol.s_rel));
    }
    let all_pass = sol.converged && rows.iter().all(|r| r.pass);
    Ok(ConnectionReport {
        rank,
        m: data.m.clone(),
        converged: sol.converged,
        newton_iterations: sol.newton_iterations,
        residual_norm: sol.residual_norm,
        rows,
        all_pass,
    })
}

/// Reports for several `m` in parallel.
pub fn connection_sweep(rank: Rank, ms: &[Vec<f64>], opts: &SolverOptions) -> Vec<Result<ConnectionReport>> {
    let tol = ReportTolerances::for_rank(rank);
    ms.par_iter().map(|m| connection_problem_report(rank, m, opts, &tol)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LaplaceRow {
    pub x: f64,
    /// Quadrature value times `e^{2x}`.
    pub integral_scaled: f64,
    /// `(1/2)(pi x)^(-1/2)`.
    pub asymptotic_scaled: f64,
    pub rel_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Quadrature of `(1/2pi) int_0^inf e^{-x(l + 1/l)} dl/l` against its leading
/// Laplace asymptotic, with the error budget `1.5 / x`.
pub fn bessel_laplace_check(x_values: &[f64]) -> Result<Vec<LaplaceRow>> {
    x_values
        .iter()
        .map(|&x| {
            if !(x >= 1.0) {
                return Err(TodaError::Domain(format!("x must be at least 1, got {x}")));
            }
            let q = spectral::laplace_integral_scaled(x)?;
            let a = 0.5 / (PI * x).sqrt();
            let rel = spectral::laplace_relative_error(x)?;
            let bound = 1.5 / x;
            Ok(LaplaceRow { x, integral_scaled: q, asymptotic_scaled: a, rel_error: rel, bound, pass: q > 0.0 && rel <= bound })
        })
        .collect()
}
