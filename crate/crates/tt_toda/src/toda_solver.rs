//! Radial boundary-value solver for the Toda-type system
//!
//! `Delta u_1 = e^{a u_1} - e^{u_2 - u_1}`, ...,
//! `Delta u_i = e^{u_i - u_{i-1}} - e^{u_{i+1} - u_i}`, ...,
//! `Delta u_n = e^{u_n - u_{n-1}} - e^{-b u_n}`,
//!
//! with `u_i ~ gamma_i log r` at the origin and `u_i -> 0` at infinity.
//! In `s = log r` the radial equation is `u'' = e^{2s} f(u)`, discretised on a
//! uniform grid and solved by damped Newton with continuation in `gamma`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::Rank;
use crate::error::{Result, TodaError};

/// One exponential `e^{alpha . u} / sigma` of the potential; its gradient
/// `coef e^{alpha . u}` with `coef = alpha / sigma` enters `f`.
#[derive(Clone, Debug)]
struct Term {
    alpha: Vec<f64>,
    coef: Vec<f64>,
    sigma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BvpProblem {
    pub n_eqs: usize,
    pub a: f64,
    pub b: f64,
    pub gamma: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub nodes: usize,
    /// Some inequality of the admissible cone holds with equality.
    pub non_generic: bool,
}

impl BvpProblem {
    pub fn new(a: f64, b: f64, gamma: Vec<f64>, s_min: f64, s_max: f64, nodes: usize) -> Result<Self> {
        let n = gamma.len();
        if n == 0 {
            return Err(TodaError::InvalidInput("at least one unknown is required".into()));
        }
        if !(a > 0.0 && b > 0.0) {
            return Err(TodaError::InvalidInput("a and b must be positive".into()));
        }
        if !(s_min < s_max) || nodes < 10 {
            return Err(TodaError::InvalidInput("domain must be non-empty with at least 10 nodes".into()));
        }
        let margins = admissible_margins(a, b, &gamma);
        let worst = margins.iter().cloned().fold(f64::INFINITY, f64::min);
        if worst < -1e-12 {
            return Err(TodaError::InvalidInput(format!(
                "gamma = {gamma:?} violates -2 <= a gamma_1, -2 <= gamma_(i+1) - gamma_i, b gamma_n <= 2"
            )));
        }
        Ok(BvpProblem { n_eqs: n, a, b, gamma, s_min, s_max, nodes, non_generic: worst <= 1e-12 })
    }

    pub fn with_gamma(&self, gamma: Vec<f64>) -> Result<Self> {
        BvpProblem::new(self.a, self.b, gamma, self.s_min, self.s_max, self.nodes)
    }

    pub fn with_nodes(&self, nodes: usize) -> Self {
        BvpProblem { nodes, ..self.clone() }
    }

    pub fn spacing(&self) -> f64 {
        (self.s_max - self.s_min) / (self.nodes - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.nodes).map(|j| self.s_min + h * j as f64).collect()
    }

    fn terms(&self) -> Vec<Term> {
        let n = self.n_eqs;
        let mut out = Vec::with_capacity(n + 1);
        let mut alpha = vec![0.0; n];
        alpha[0] = self.a;
        let mut coef = vec![0.0; n];
        coef[0] = 1.0;
        out.push(Term { alpha, coef, sigma: self.a });
        for i in 0..n - 1 {
            let mut alpha = vec![0.0; n];
            alpha[i + 1] = 1.0;
            alpha[i] = -1.0;
            out.push(Term { coef: alpha.clone(), alpha, sigma: 1.0 });
        }
        let mut alpha = vec![0.0; n];
        alpha[n - 1] = -self.b;
        let mut coef = vec![0.0; n];
        coef[n - 1] = -1.0;
        out.push(Term { alpha, coef, sigma: self.b });
        out
    }

    /// Exponents `2 + alpha . gamma` of the leading corrections to
    /// `u ~ gamma s + const` as `s -> -inf`, one per exponential term.
    pub fn origin_exponents(&self) -> Vec<f64> {
        self.terms().iter().map(|t| 2.0 + dot(&t.alpha, &self.gamma)).collect()
    }

    /// `f(u)` and its Jacobian at one node.
    pub fn nonlinearity(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.n_eqs;
        let mut f = vec![0.0; n];
        let mut df = DMatrix::zeros(n, n);
        for t in self.terms() {
            let v = dot(&t.alpha, u).exp();
            for p in 0..n {
                f[p] += t.coef[p] * v;
                for q in 0..n {
                    df[(p, q)] += t.coef[p] * t.alpha[q] * v;
                }
            }
        }
        (f, df)
    }
}

/// Slack in each admissibility inequality (non-negative when admissible).
pub fn admissible_margins(a: f64, b: f64, gamma: &[f64]) -> Vec<f64> {
    let n = gamma.len();
    let mut out = vec![a * gamma[0] + 2.0];
    for i in 0..n.saturating_sub(1) {
        out.push(gamma[i + 1] - gamma[i] + 2.0);
    }
    out.push(2.0 - b * gamma[n - 1]);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolverOptions {
    /// Convergence threshold on the `h^2`-scaled residual max-norm.
    pub tol: f64,
    pub max_newton: usize,
    pub continuation_steps: usize,
    /// Continuation step halvings allowed after a failed stage.
    pub max_refinements: usize,
    pub armijo: f64,
    pub max_halvings: usize,
    /// Account for the mass of `e^{2s} f(u)` below `s_min` in the left flux.
    pub flux_correction: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-13,
            max_newton: 60,
            continuation_steps: 10,
            max_refinements: 6,
            armijo: 1e-4,
            max_halvings: 30,
            flux_correction: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialSolution {
    pub grid: Vec<f64>,
    /// `u[(i, j)]`: component `i` at node `j`.
    #[serde(skip)]
    pub u: DMatrix<f64>,
    /// `h^2`-scaled residual max-norm.
    pub residual_norm: f64,
    /// Unscaled residual max-norm of `u'' - e^{2s} f(u)`.
    pub residual_unscaled: f64,
    pub converged: bool,
    pub newton_iterations: usize,
    pub continuation_stages: usize,
    /// Discrete functional after every accepted Newton step of the last stage.
    pub functional_history: Vec<f64>,
    pub gamma: Vec<f64>,
    pub non_generic: bool,
}

impl RadialSolution {
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.u.row(i).iter().cloned().collect()
    }

    /// Linear interpolation of component `i` at `s`.
    pub fn value_at(&self, i: usize, s: f64) -> f64 {
        let g = &self.grid;
        let h = g[1] - g[0];
        let pos = ((s - g[0]) / h).clamp(0.0, (g.len() - 1) as f64);
        let j = (pos.floor() as usize).min(g.len() - 2);
        let t = pos - j as f64;
        self.u[(i, j)] * (1.0 - t) + self.u[(i, j + 1)] * t
    }
}

struct Discrete<'a> {
    p: &'a BvpProblem,
    terms: Vec<Term>,
    grid: Vec<f64>,
    h: f64,
    flux: bool,
}

impl<'a> Discrete<'a> {
    fn new(p: &'a BvpProblem, flux: bool) -> Self {
        Discrete { p, terms: p.terms(), grid: p.grid(), h: p.spacing(), flux }
    }

    /// Left flux `gamma + sum_t coef e^{2 s_0 + alpha.u_0} / (2 + alpha.gamma)` and its Jacobian.
    fn left_flux(&self, u0: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.p.n_eqs;
        let mut g = self.p.gamma.clone();
        let mut dg = DMatrix::zeros(n, n);
        if self.flux {
            for t in &self.terms {
                let den = 2.0 + dot(&t.alpha, &self.p.gamma);
                if den <= 0.0 {
                    continue;
                }
                let v = (2.0 * self.grid[0] + dot(&t.alpha, u0)).exp() / den;
                for a in 0..n {
                    g[a] += t.coef[a] * v;
                    for b in 0..n {
                        dg[(a, b)] += t.coef[a] * t.alpha[b] * v;
                    }
                }
            }
        }
        (g, dg)
    }

    fn residual(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.p.n_eqs, self.p.nodes);
        let h2 = self.h * self.h;
        let mut r = DMatrix::zeros(n, m);
        for j in 0..m - 1 {
            let uj: Vec<f64> = u.column(j).iter().cloned().collect();
            let (f, _) = self.p.nonlinearity(&uj);
            let e = (2.0 * self.grid[j]).exp();
            if j == 0 {
                let (g0, _) = self.left_flux(&uj);
                for i in 0..n {
                    r[(i, 0)] = (2.0 * u[(i, 1)] - 2.0 * u[(i, 0)] - 2.0 * self.h * g0[i]) / h2 - e * f[i];
                }
            } else {
                for i in 0..n {
                    r[(i, j)] = (u[(i, j + 1)] - 2.0 * u[(i, j)] + u[(i, j - 1)]) / h2 - e * f[i];
                }
            }
        }
        for i in 0..n {
            r[(i, m - 1)] = u[(i, m - 1)];
        }
        r
    }

    /// Newton step from the block-tridiagonal Jacobian.
    fn newton_step(&self, u: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, m) = (self.p.n_eqs, self.p.nodes);
        let h2 = self.h * self.h;
        let eye = DMatrix::<f64>::identity(n, n);
        let mut lower = Vec::with_capacity(m);
        let mut diag = Vec::with_capacity(m);
        let mut upper = Vec::with_capacity(m);
        for j in 0..m {
            if j == m - 1 {
                lower.push(DMatrix::zeros(n, n));
                diag.push(eye.clone());
                upper.push(DMatrix::zeros(n, n));
                continue;
            }
            let uj: Vec<f64> = u.column(j).iter().cloned().collect();
            let (_, df) = self.p.nonlinearity(&uj);
            let e = (2.0 * self.grid[j]).exp();
            if j == 0 {
                let (_, dg) = self.left_flux(&uj);
                lower.push(DMatrix::zeros(n, n));
                diag.push(&eye * (-2.0 / h2) - dg * (2.0 / self.h) - df * e);
                upper.push(&eye * (2.0 / h2));
            } else {
                lower.push(&eye / h2);
                diag.push(&eye * (-2.0 / h2) - df * e);
                upper.push(&eye / h2);
            }
        }
        let rhs: Vec<DVector<f64>> = (0..m).map(|j| -r.column(j).into_owned()).collect();
        let x = block_thomas(&lower, &diag, &upper, &rhs)?;
        let mut out = DMatrix::zeros(n, m);
        for (j, v) in x.into_iter().enumerate() {
            out.set_column(j, &v);
        }
        Ok(out)
    }

    /// Discrete functional on the ball `r <= e^{s_max}` divided by `2 pi`; its
    /// gradient is the node-weighted residual.
    fn functional(&self, u: &DMatrix<f64>) -> f64 {
        let (n, m) = (self.p.n_eqs, self.p.nodes);
        let gam = &self.p.gamma;
        let mut total = 0.0;
        for j in 0..m - 1 {
            for i in 0..n {
                let ws = (u[(i, j + 1)] - u[(i, j)]) / self.h - gam[i];
                total += 0.5 * ws * ws * self.h;
            }
        }
        for j in 0..m {
            let weight = if j == 0 || j == m - 1 { 0.5 * self.h } else { self.h };
            let uj: Vec<f64> = u.column(j).iter().cloned().collect();
            let e = (2.0 * self.grid[j]).exp();
            for t in &self.terms {
                total += weight * e * dot(&t.alpha, &uj).exp() / t.sigma;
            }
        }
        if self.flux {
            let u0: Vec<f64> = u.column(0).iter().cloned().collect();
            for t in &self.terms {
                let den = 2.0 + dot(&t.alpha, gam);
                if den > 0.0 {
                    total += (2.0 * self.grid[0] + dot(&t.alpha, &u0)).exp() / (den * t.sigma);
                }
            }
        }
        total
    }
}

fn max_abs_real(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Solves `A_j x_{j-1} + B_j x_j + C_j x_{j+1} = r_j`.
pub fn block_thomas(
    lower: &[DMatrix<f64>],
    diag: &[DMatrix<f64>],
    upper: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let m = diag.len();
    let mut cp: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut rp: Vec<DVector<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let (mat, r) = if j == 0 {
            (diag[0].clone(), rhs[0].clone())
        } else {
            (&diag[j] - &lower[j] * &cp[j - 1], &rhs[j] - &lower[j] * &rp[j - 1])
        };
        let lu = mat.lu();
        let c = lu.solve(&upper[j]).ok_or_else(|| TodaError::Singular(format!("Jacobian block {j}")))?;
        let v = lu.solve(&r).ok_or_else(|| TodaError::Singular(format!("Jacobian block {j}")))?;
        cp.push(c);
        rp.push(v);
    }
    let mut x = vec![DVector::zeros(0); m];
    x[m - 1] = rp[m - 1].clone();
    for j in (0..m - 1).rev() {
        x[j] = &rp[j] - &cp[j] * &x[j + 1];
    }
    Ok(x)
}

struct StageOutcome {
    u: DMatrix<f64>,
    scaled: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn newton(problem: &BvpProblem, u0: DMatrix<f64>, opts: &SolverOptions) -> Result<StageOutcome> {
    let disc = Discrete::new(problem, opts.flux_correction);
    let h2 = disc.h * disc.h;
    let mut u = u0;
    let mut r = disc.residual(&u);
    let mut nr = max_abs_real(&r) * h2;
    let mut history = vec![disc.functional(&u)];
    for it in 0..opts.max_newton {
        if nr < opts.tol {
            return Ok(StageOutcome { u, scaled: nr, iterations: it, converged: true, history });
        }
        let du = disc.newton_step(&u, &r)?;
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &u + &du * lam;
            let rt = disc.residual(&trial);
            let nt = max_abs_real(&rt) * h2;
            if nt.is_finite() && (nt < (1.0 - opts.armijo * lam) * nr || nt < opts.tol) {
                accepted = Some((trial, rt, nt));
                break;
            }
            lam *= 0.5;
        }
        match accepted {
            Some((trial, rt, nt)) => {
                u = trial;
                r = rt;
                nr = nt;
                history.push(disc.functional(&u));
            }
            None => {
                log::debug!("line search failed at iteration {it}, residual {nr:.3e}");
                return Ok(StageOutcome { u, scaled: nr, iterations: it, converged: false, history });
            }
        }
    }
    Ok(StageOutcome { converged: nr < opts.tol, u, scaled: nr, iterations: opts.max_newton, history })
}

/// Solves with continuation `gamma_k = (k/K) gamma`, halving the step on failure.
pub fn solve_bvp(problem: &BvpProblem, opts: &SolverOptions) -> Result<RadialSolution> {
    solve_bvp_from(problem, opts, None)
}

/// As [`solve_bvp`], optionally starting Newton directly from a given profile
/// (no continuation).
pub fn solve_bvp_from(problem: &BvpProblem, opts: &SolverOptions, start: Option<DMatrix<f64>>) -> Result<RadialSolution> {
    let (n, m) = (problem.n_eqs, problem.nodes);
    let mut total_iters = 0;
    let mut stages = 0;
    let last = if let Some(u0) = start {
        if u0.shape() != (n, m) {
            return Err(TodaError::DimensionMismatch { expected: n * m, got: u0.len() });
        }
        stages = 1;
        let out = newton(problem, u0, opts)?;
        total_iters += out.iterations;
        out
    } else {
        let mut u = DMatrix::zeros(n, m);
        let mut lam = 0.0;
        let mut step = 1.0 / opts.continuation_steps.max(1) as f64;
        let mut refinements = 0;
        loop {
            let target = (lam + step).min(1.0);
            let g: Vec<f64> = problem.gamma.iter().map(|x| x * target).collect();
            let stage = problem.with_gamma(g)?;
            let out = newton(&stage, u.clone(), opts)?;
            total_iters += out.iterations;
            stages += 1;
            if out.converged {
                lam = target;
                u = out.u.clone();
                log::debug!("continuation reached {lam:.4} after {} Newton steps", out.iterations);
                if lam >= 1.0 {
                    break out;
                }
            } else {
                refinements += 1;
                if refinements > opts.max_refinements {
                    log::warn!("continuation stalled at fraction {lam:.4}");
                    break out;
                }
                step *= 0.5;
            }
        }
    };
    let disc = Discrete::new(problem, opts.flux_correction);
    let r = disc.residual(&last.u);
    Ok(RadialSolution {
        grid: problem.grid(),
        residual_unscaled: max_abs_real(&r.rows(0, n).columns(0, m - 1).into_owned()),
        residual_norm: last.scaled,
        converged: last.converged,
        newton_iterations: total_iters,
        continuation_stages: stages,
        functional_history: last.history,
        u: last.u,
        gamma: problem.gamma.clone(),
        non_generic: problem.non_generic,
    })
}

/// Independent solves in parallel.
pub fn solve_many(problems: &[BvpProblem], opts: &SolverOptions) -> Vec<Result<RadialSolution>> {
    problems.par_iter().map(|p| solve_bvp(p, opts)).collect()
}

/// Functional `I(w)` on the ball of radius `e^{s_max}`, `w_i = u_i - gamma_i (s - s_max)`,
/// including the `2 pi` factor.
pub fn functional_value(problem: &BvpProblem, u: &DMatrix<f64>, opts: &SolverOptions) -> f64 {
    2.0 * std::f64::consts::PI * Discrete::new(problem, opts.flux_correction).functional(u)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PohozaevReport {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Pohozaev identity on the annulus `e^{s0} < r < e^{s1}` for a radial solution:
/// bulk terms by trapezoid quadrature, boundary fluxes by backward differences.
pub fn pohozaev_residual(problem: &BvpProblem, sol: &RadialSolution, s0: f64, s1: f64) -> Result<PohozaevReport> {
    let g = &sol.grid;
    let h = g[1] - g[0];
    let j0 = ((s0 - g[0]) / h).round() as isize;
    let j1 = ((s1 - g[0]) / h).round() as isize;
    if j0 < 1 || j1 as usize >= g.len() - 1 || j1 < j0 {
        return Err(TodaError::Domain(format!("annulus [{s0}, {s1}] outside the grid interior")));
    }
    let (j0, j1) = (j0 as usize, j1 as usize);
    let terms = problem.terms();
    let n = problem.n_eqs;
    let col = |j: usize| -> Vec<f64> { sol.u.column(j).iter().cloned().collect() };
    let pot = |j: usize| -> f64 {
        let uj = col(j);
        terms.iter().map(|t| (dot(&t.alpha, &uj).exp() - 1.0) / t.sigma).sum()
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut bulk = 0.0;
    for j in j0..=j1 {
        let w = if j0 == j1 {
            0.0
        } else if j == j0 || j == j1 {
            0.5 * h
        } else {
            h
        };
        bulk += w * (2.0 * g[j]).exp() * pot(j);
    }
    let lhs = 2.0 * two_pi * bulk;
    let mut rhs = two_pi * ((2.0 * g[j1]).exp() * pot(j1) - (2.0 * g[j0]).exp() * pot(j0));
    for i in 0..n {
        let us1 = (sol.u[(i, j1)] - sol.u[(i, j1 - 1)]) / h;
        let us0 = (sol.u[(i, j0)] - sol.u[(i, j0 - 1)]) / h;
        rhs += std::f64::consts::PI * (us0 * us0 - us1 * us1);
    }
    Ok(PohozaevReport { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Reduction of the periodic, anti-symmetric radial Toda system to the above
/// with `u_{i+1}(r) = 2 w_i(r/2)`.
#[derive(Clone, Debug, Serialize)]
pub struct TodaReduction {
    pub rank: Rank,
    pub problem: BvpProblem,
}

pub fn default_domain() -> (f64, f64, usize) {
    ((1e-4_f64).ln(), 40.0_f64.ln(), 4000)
}

pub fn assemble_tt_toda(rank: Rank, m: &[f64]) -> Result<TodaReduction> {
    let (s0, s1, nodes) = default_domain();
    assemble_tt_toda_on(rank, m, s0, s1, nodes)
}

pub fn assemble_tt_toda_on(rank: Rank, m: &[f64], s_min: f64, s_max: f64, nodes: usize) -> Result<TodaReduction> {
    crate::spectral::validate_m(rank, m)?;
    let d = rank.d();
    let b = if rank.is_even() { 2.0 } else { 1.0 };
    let gamma: Vec<f64> = (0..d).map(|i| -2.0 * m[i]).collect();
    let problem = BvpProblem::new(2.0, b, gamma, s_min, s_max, nodes)?;
    Ok(TodaReduction { rank, problem })
}

impl TodaReduction {
    /// Full vector `2 w_0, ..., 2 w_n` at node `j` (`r = e^s = 2x`).
    pub fn doubled_w_at(&self, sol: &RadialSolution, j: usize) -> Vec<f64> {
        let n1 = self.rank.np1();
        let mut out = vec![0.0; n1];
        for i in 0..self.rank.d() {
            out[i] = sol.u[(i, j)];
            out[n1 - 1 - i] = -sol.u[(i, j)];
        }
        out
    }

    /// `w_i(x)` for all `i` (linear interpolation at `r = 2x`).
    pub fn w_at(&self, sol: &RadialSolution, x: f64) -> Vec<f64> {
        let n1 = self.rank.np1();
        let s = (2.0 * x).ln();
        let mut out = vec![0.0; n1];
        for i in 0..self.rank.d() {
            let v = 0.5 * sol.value_at(i, s);
            out[i] = v;
            out[n1 - 1 - i] = -v;
        }
        out
    }

    /// `h^2`-scaled residual of the full periodic system evaluated on the
    /// reconstructed `w`, interior nodes only.
    pub fn full_residual(&self, sol: &RadialSolution) -> f64 {
        let n1 = self.rank.np1();
        let g = &sol.grid;
        let h = g[1] - g[0];
        let mut worst: f64 = 0.0;
        for j in 1..g.len() - 1 {
            let (wm, w0, wp) = (self.doubled_w_at(sol, j - 1), self.doubled_w_at(sol, j), self.doubled_w_at(sol, j + 1));
            let e = (2.0 * g[j]).exp();
            for i in 0..n1 {
                let prev = w0[(i + n1 - 1) % n1];
                let next = w0[(i + 1) % n1];
                let f = (w0[i] - prev).exp() - (next - w0[i]).exp();
                let r = (wp[i] - 2.0 * w0[i] + wm[i]) - h * h * e * f;
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(gamma: Vec<f64>, a: f64, b: f64) -> BvpProblem {
        let (s0, s1, nodes) = default_domain();
        BvpProblem::new(a, b, gamma, s0, s1, nodes).unwrap()
    }

    #[test]
    fn zero_exponents_give_zero() {
        let p = small(vec![0.0, 0.0], 2.0, 2.0);
        let sol = solve_bvp(&p, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.u.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn rejects_inadmissible_exponents() {
        let (s0, s1, nodes) = default_domain();
        assert!(BvpProblem::new(2.0, 2.0, vec![-1.5], s0, s1, nodes).is_err());
        assert!(BvpProblem::new(2.0, 1.0, vec![0.5, -1.8], s0, s1, nodes).is_err());
        assert!(BvpProblem::new(2.0, 2.0, vec![-1.0], s0, s1, nodes).unwrap().non_generic);
    }

    #[test]
    fn single_equation_positive_and_monotone() {
        let rank = Rank::new(2).unwrap();
        let red = assemble_tt_toda(rank, &[1.0 / 6.0, -1.0 / 6.0]).unwrap();
        assert_eq!(red.problem.n_eqs, 1);
        let sol = solve_bvp(&red.problem, &SolverOptions::default()).unwrap();
        assert!(sol.converged, "{}", sol.residual_norm);
        let u = sol.component(0);
        assert!(u.iter().all(|x| *x >= -1e-14));
        assert!(u.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        let fine = solve_bvp(&red.problem.with_nodes(7999), &SolverOptions::default()).unwrap();
        let mut diff: f64 = 0.0;
        for j in 0..4000 {
            diff = diff.max((sol.u[(0, j)] - fine.u[(0, 2 * j)]).abs());
        }
        assert!(diff < 1e-6, "{diff}");
        assert!(red.full_residual(&sol) < 1e-9);
    }

    #[test]
    fn reduction_shapes() {
        let r3 = assemble_tt_toda(Rank::new(3).unwrap(), &[0.2, 0.0, -0.2]).unwrap();
        assert_eq!((r3.problem.n_eqs, r3.problem.a, r3.problem.b), (1, 2.0, 1.0));
        let r4 = assemble_tt_toda(Rank::new(4).unwrap(), &[0.3, 0.1, -0.1, -0.3]).unwrap();
        assert_eq!((r4.problem.n_eqs, r4.problem.a, r4.problem.b), (2, 2.0, 2.0));
        assert_eq!(r4.problem.gamma, vec![-0.6, -0.2]);
        let sol = solve_bvp(&r4.problem, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(r4.full_residual(&sol) < 1e-9);
    }

    #[test]
    fn functional_of_zero_solution() {
        let p = small(vec![0.0, 0.0, 0.0], 2.0, 1.0);
        let u = DMatrix::zeros(3, p.nodes);
        let r = p.s_max.exp();
        let want = (1.0 / 2.0 + 2.0 + 1.0) * std::f64::consts::PI * r * r;
        let got = functional_value(&p, &u, &SolverOptions::default());
        assert!((got - want).abs() < 1e-5 * want, "{got} vs {want}");
    }

    #[test]
    fn functional_decreases_along_newton() {
        let p = small(vec![-0.4, -0.2], 2.0, 2.0);
        let sol = solve_bvp_from(&p, &SolverOptions::default(), Some(DMatrix::zeros(2, p.nodes))).unwrap();
        assert!(sol.converged);
        let h = &sol.functional_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()), "{h:?}");
        let dirichlet_floor = 0.0;
        assert!(h.last().unwrap() >= &dirichlet_floor);
    }

    #[test]
    fn pohozaev_first_order_in_spacing() {
        let rank = Rank::new(2).unwrap();
        let red = assemble_tt_toda(rank, &[1.0 / 6.0, -1.0 / 6.0]).unwrap();
        let (s0, s1) = ((0.05_f64).ln(), 2.0_f64.ln());
        let coarse = solve_bvp(&red.problem.with_nodes(2000), &SolverOptions::default()).unwrap();
        let fine = solve_bvp(&red.problem.with_nodes(3999), &SolverOptions::default()).unwrap();
        let a = pohozaev_residual(&red.problem, &coarse, s0, s1).unwrap().residual;
        let b = pohozaev_residual(&red.problem, &fine, s0, s1).unwrap().residual;
        let ratio = a / b;
        assert!((1.4..=2.6).contains(&ratio), "ratio {ratio} ({a}, {b})");
        let zero = pohozaev_residual(&red.problem, &fine, s0, s0).unwrap();
        assert!(zero.residual < 1e-14);
    }

    #[test]
    fn comparison_principle_on_pairs() {
        let (s0, s1, _) = default_domain();
        let mut seed = 99u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..5 {
            let g1 = vec![-0.9 + 0.8 * next(), -0.5 + 0.6 * next()];
            let g2: Vec<f64> = g1.iter().map(|x| x + 0.05 + 0.2 * next()).collect();
            let p1 = BvpProblem::new(2.0, 2.0, g1, s0, s1, 2000).unwrap();
            let p2 = p1.with_gamma(g2).unwrap();
            let out = solve_many(&[p1, p2], &SolverOptions::default());
            let (a, b) = (out[0].as_ref().unwrap(), out[1].as_ref().unwrap());
            assert!(a.converged && b.converged);
            assert!(a.u.iter().zip(b.u.iter()).all(|(x, y)| x >= &(y - 1e-12)));
        }
    }

    #[test]
    fn uniqueness_from_two_starts() {
        let p = small(vec![-0.5, -0.1], 2.0, 2.0);
        let opts = SolverOptions::default();
        let a = solve_bvp(&p, &opts).unwrap();
        let grid = p.grid();
        let beta = [1.0, 0.6];
        let start = DMatrix::from_fn(2, p.nodes, |i, j| beta[i] * (p.s_max - grid[j]));
        let b = solve_bvp_from(&p, &opts, Some(start)).unwrap();
        assert!(a.converged && b.converged);
        let diff = a.u.iter().zip(b.u.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn second_order_grid_convergence() {
        let red = assemble_tt_toda(Rank::new(3).unwrap(), &[0.25, 0.0, -0.25]).unwrap();
        let opts = SolverOptions::default();
        let sols: Vec<RadialSolution> =
            [1001, 2001, 4001].iter().map(|&n| solve_bvp(&red.problem.with_nodes(n), &opts).unwrap()).collect();
        let mut d1: f64 = 0.0;
        let mut d2: f64 = 0.0;
        for j in 0..1001 {
            d1 = d1.max((sols[0].u[(0, j)] - sols[1].u[(0, 2 * j)]).abs());
            d2 = d2.max((sols[1].u[(0, 2 * j)] - sols[2].u[(0, 4 * j)]).abs());
        }
        let ratio = d1 / d2;
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    }
}
