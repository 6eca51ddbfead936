//! `tt-toda` command line: argument and config parsing, dispatch, and output.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::algebra::Rank;
use crate::asymptotics::{self, ConnectionReport, FitResult};
use crate::error::TodaError;
use crate::jump_data::{self, ContourSpec, JumpBound, Reconstruction, RECONSTRUCTION_MIN_X};
use crate::linalg::{c, max_abs, max_abs_diff, CMat};
use crate::linear_ode::{self, CanonicalOptions, OdeSystem};
use crate::mellin::{self, EvalPolicy, MellinParams, QuadratureOptions};
use crate::spectral::{self, AsymptoticData, ModelInput, PositivityReport, StokesData};
use crate::toda_solver::{self, SolverOptions};

pub const SCHEMA: &str = "v1";

#[derive(Parser, Debug)]
#[command(name = "tt-toda", version, about = "Monodromy data and radial solutions of the tt*-Toda equations")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format of tabular outputs (grids from `solve` are always CSV).
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Exit nonzero when any acceptance flag in the report fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stokes data, connection eigenvalues and reality flags from (c, k) or m.
    Monodromy(InputArgs),
    /// Solves the radial boundary-value problem and fits both ends.
    Solve(InputArgs),
    /// Compares fitted asymptotics with the closed-form monodromy data.
    ConnectionCheck(InputArgs),
    /// Numeric Stokes factors and connection matrix against closed forms.
    OdeVerify(InputArgs),
    /// Samples of the Mellin-Barnes solution with cross-validation residuals.
    Mellin(InputArgs),
    /// Jump-matrix identities, decay bound and first-order reconstruction.
    JumpCheck(InputArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Matrix size n+1.
    #[arg(long = "nplus1")]
    pub nplus1: Option<usize>,
    /// Comma-separated m (first d entries or all n+1); repeat for a sweep.
    #[arg(long, allow_hyphen_values = true)]
    pub m: Vec<String>,
    /// m_0 for n+1 = 2 or 3; a comma list sweeps.
    #[arg(long, allow_hyphen_values = true)]
    pub m0: Option<String>,
    /// Exponents k_0..k_n of the holomorphic data.
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<String>,
    /// Coefficients c_0..c_n of the holomorphic data.
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<String>,
    /// Constants c_hat (defaults to all ones with m input).
    #[arg(long, allow_hyphen_values = true)]
    pub chat: Option<String>,
    /// Left end of the grid in s = ln r (default ln 1e-4).
    #[arg(long, allow_hyphen_values = true)]
    pub smin: Option<String>,
    /// Right end of the grid in s = ln r (default ln 40).
    #[arg(long, allow_hyphen_values = true)]
    pub smax: Option<String>,
    /// Number of grid nodes (default 4000).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Sample |zeta| values for `mellin`.
    #[arg(long)]
    pub zeta: Option<String>,
    /// Sample arguments of zeta for `mellin`.
    #[arg(long, allow_hyphen_values = true)]
    pub arg: Option<String>,
    /// Radius x for `jump-check`.
    #[arg(long)]
    pub x: Option<String>,
}

/// Scalar that may be given as a JSON number or a string such as `"1/6"`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Num(f64),
    Text(String),
}

impl Real {
    fn value(&self) -> Result<f64, CliError> {
        match self {
            Real::Num(v) => Ok(*v),
            Real::Text(t) => parse_real(t),
        }
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub nplus1: Option<usize>,
    pub m: Option<Vec<Vec<Real>>>,
    pub m0: Option<Vec<Real>>,
    pub k: Option<Vec<Real>>,
    pub c: Option<Vec<Real>>,
    pub chat: Option<Vec<Real>>,
    pub smin: Option<Real>,
    pub smax: Option<Real>,
    pub nodes: Option<usize>,
    pub zeta: Option<Vec<Real>>,
    pub arg: Option<Vec<Real>>,
    pub x: Option<Real>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub strict: Option<bool>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Invalid input; exit code 2.
    Validation(String),
    /// Computation or I/O failure; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<TodaError> for CliError {
    fn from(e: TodaError) -> Self {
        match e {
            TodaError::InvalidInput(_) | TodaError::NonGeneric(_) | TodaError::DimensionMismatch { .. } | TodaError::Domain(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

/// Exit code returned when `--strict` is set and a report flag fails.
pub const STRICT_FAILURE: i32 = 3;

/// Parses `"1/6"`, `"-0.25"` or `"1e-3"`. Integer ratios are converted with a
/// single rounding.
pub fn parse_real(text: &str) -> Result<f64, CliError> {
    let t = text.trim();
    let bad = || CliError::Validation(format!("cannot parse number {t:?}"));
    let v = match t.split_once('/') {
        Some((num, den)) => {
            let (num, den) = (num.trim(), den.trim());
            match (num.parse::<i64>(), den.parse::<i64>()) {
                (Ok(p), Ok(q)) => {
                    if q == 0 {
                        return Err(CliError::Validation(format!("zero denominator in {t:?}")));
                    }
                    p as f64 / q as f64
                }
                _ => {
                    let p: f64 = num.parse().map_err(|_| bad())?;
                    let q: f64 = den.parse().map_err(|_| bad())?;
                    if q == 0.0 {
                        return Err(CliError::Validation(format!("zero denominator in {t:?}")));
                    }
                    p / q
                }
            }
        }
        None => t.parse::<f64>().map_err(|_| bad())?,
    };
    if !v.is_finite() {
        return Err(CliError::Validation(format!("non-finite number {t:?}")));
    }
    Ok(v)
}

pub fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',').filter(|p| !p.trim().is_empty()).map(parse_real).collect()
}

fn reals(v: &[Real]) -> Result<Vec<f64>, CliError> {
    v.iter().map(Real::value).collect()
}

/// Completes the first `d` entries of `m` by anti-symmetry, or accepts all `n+1`.
pub fn complete_m(rank: Rank, given: &[f64]) -> Result<Vec<f64>, CliError> {
    let (n1, d) = (rank.np1(), rank.d());
    if given.len() == n1 {
        return Ok(given.to_vec());
    }
    if given.len() == d {
        return Ok(asymptotics::extend_antisymmetric(given, rank)?);
    }
    Err(CliError::Validation(format!(
        "m has {} entries; expected d = {d} or n+1 = {n1} (m_i + m_(n-i) = 0)",
        given.len()
    )))
}

/// Fully resolved inputs after merging config and flags.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub rank: Rank,
    pub data: Vec<AsymptoticData>,
    pub smin: f64,
    pub smax: f64,
    pub nodes: usize,
    pub zeta: Vec<f64>,
    pub arg: Vec<f64>,
    pub x: f64,
    pub out: PathBuf,
    pub format: Format,
    pub strict: bool,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

pub fn resolve(cli: &Cli, args: &InputArgs, cfg: &RunConfig) -> Result<Resolved, CliError> {
    let np1 = args
        .nplus1
        .or(cfg.nplus1)
        .ok_or_else(|| CliError::Validation("--nplus1 is required".into()))?;
    let rank = Rank::new(np1)?;
    let opt_list = |flag: &Option<String>, conf: &Option<Vec<Real>>| -> Result<Option<Vec<f64>>, CliError> {
        match (flag, conf) {
            (Some(t), _) => Ok(Some(parse_list(t)?)),
            (None, Some(v)) => Ok(Some(reals(v)?)),
            (None, None) => Ok(None),
        }
    };
    let chat = opt_list(&args.chat, &cfg.chat)?;
    let k = opt_list(&args.k, &cfg.k)?;
    let cc = opt_list(&args.c, &cfg.c)?;
    let m0 = opt_list(&args.m0, &cfg.m0)?;
    let mut ms: Vec<Vec<f64>> = if !args.m.is_empty() {
        args.m.iter().map(|t| parse_list(t)).collect::<Result<_, _>>()?
    } else if args.m0.is_none() {
        cfg.m.iter().flatten().map(|v| reals(v)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    if let Some(vals) = m0 {
        if rank.d() != 1 {
            return Err(CliError::Validation(format!("--m0 needs n+1 in {{2, 3}}, got {np1}")));
        }
        ms.extend(vals.into_iter().map(|v| vec![v]));
    }
    let mut data = Vec::new();
    match (k, cc) {
        (Some(k), Some(cv)) => {
            if !ms.is_empty() {
                return Err(CliError::Validation("give either (c, k) or m, not both".into()));
            }
            let input = ModelInput::new(rank, cv, k)?;
            let d = spectral::derive_asymptotic(&input)?;
            data.push(match &chat {
                Some(ch) => AsymptoticData::from_m(rank, &d.m, Some(ch))?,
                None => d,
            });
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(CliError::Validation("--k and --c must be given together".into()));
        }
        (None, None) => {
            if ms.is_empty() {
                return Err(CliError::Validation("no input: give --m, --m0 or --k with --c".into()));
            }
            for m in &ms {
                let full = complete_m(rank, m)?;
                data.push(AsymptoticData::from_m(rank, &full, chat.as_deref())?);
            }
        }
    }
    let (dmin, dmax, dnodes) = toda_solver::default_domain();
    let scalar = |flag: &Option<String>, conf: &Option<Real>, default: f64| -> Result<f64, CliError> {
        match (flag, conf) {
            (Some(t), _) => parse_real(t),
            (None, Some(r)) => r.value(),
            (None, None) => Ok(default),
        }
    };
    let smin = scalar(&args.smin, &cfg.smin, dmin)?;
    let smax = scalar(&args.smax, &cfg.smax, dmax)?;
    let nodes = args.nodes.or(cfg.nodes).unwrap_or(dnodes);
    let zeta = opt_list(&args.zeta, &cfg.zeta)?.unwrap_or_else(|| vec![2.0, 5.0, 8.0]);
    let arg = opt_list(&args.arg, &cfg.arg)?.unwrap_or_else(|| vec![-PI / 4.0, 0.0, PI / 4.0]);
    let x = scalar(&args.x, &cfg.x, 6.0)?;
    Ok(Resolved {
        rank,
        data,
        smin,
        smax,
        nodes,
        zeta,
        arg,
        x,
        out: cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        format: cli.format.or(cfg.format).unwrap_or(Format::Json),
        strict: cli.strict || cfg.strict.unwrap_or(false),
    })
}

/// `%.12e` with a signed, at least two-digit exponent.
pub fn fmt_e12(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_e12(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        w.write_all(fmt_e12(v as f64).as_bytes())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema: &'static str,
    command: &'a str,
    result: &'a T,
}

/// Serializes `value` in the stable `v1` envelope with `%.12e` floats.
pub fn to_json<T: Serialize>(command: &str, value: &T) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
    Envelope { schema: SCHEMA, command, result: value }
        .serialize(&mut ser)
        .map_err(|e| CliError::Runtime(format!("serialization: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn write_json<T: Serialize>(out: &Path, name: &str, command: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    fs::write(&path, to_json(command, value)?)?;
    Ok(path)
}

/// A CSV table of string cells; floats are pre-formatted with [`fmt_e12`].
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn write_csv(out: &Path, name: &str, table: &Table) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    w.write_record(&table.header).map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    for r in &table.rows {
        w.write_record(r).map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMat> for MatrixJson {
    fn from(m: &CMat) -> Self {
        let rows = |f: fn(&crate::linalg::C64) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect();
        MatrixJson { re: rows(|z| z.re), im: rows(|z| z.im) }
    }
}

/// Outcome of one command: files written and whether all flags passed.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub all_pass: bool,
    pub strict: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonodromyEntry {
    pub nplus1: usize,
    pub m: Vec<f64>,
    pub m_prime: Vec<f64>,
    pub chat: Vec<f64>,
    pub chat_id: Vec<f64>,
    pub s: Vec<f64>,
    pub s_essential: Vec<f64>,
    pub e: Vec<f64>,
    pub char_poly_expected: Vec<f64>,
    pub char_poly_re: Vec<f64>,
    pub char_poly_im: Vec<f64>,
    pub connection_real: bool,
    pub stokes_real: bool,
    pub connection_defect: f64,
    pub stokes_defect: f64,
    pub positivity: PositivityReport,
    pub e1: MatrixJson,
}

const REALITY_TOL: f64 = 1e-8;

pub fn monodromy_entry(data: &AsymptoticData) -> Result<MonodromyEntry, CliError> {
    let rank = data.rank;
    let s = spectral::stokes_params(data)?;
    let conn = spectral::build_connection(data)?;
    let check = spectral::global_criterion(&conn, data, 1.0, REALITY_TOL)?;
    let cp = spectral::mtilde_char_poly(&s)?;
    Ok(MonodromyEntry {
        nplus1: rank.np1(),
        m: data.m.clone(),
        m_prime: data.m_prime.clone(),
        chat: data.chat.clone(),
        chat_id: spectral::chat_id(&data.m, rank)?,
        s_essential: s.essential().to_vec(),
        e: spectral::connection_eigs(data)?,
        char_poly_expected: spectral::expected_char_poly(&s),
        char_poly_re: cp.iter().map(|z| z.re).collect(),
        char_poly_im: cp.iter().map(|z| z.im).collect(),
        connection_real: check.connection_real,
        stokes_real: check.stokes_real,
        connection_defect: check.connection_defect,
        stokes_defect: check.stokes_defect,
        positivity: spectral::positivity_region_test(&s)?,
        e1: MatrixJson::from(&conn.e1),
        s: s.s,
    })
}

fn cmd_monodromy(r: &Resolved) -> Result<Outcome, CliError> {
    let entries = r.data.iter().map(monodromy_entry).collect::<Result<Vec<_>, _>>()?;
    // only the Stokes side is real unconditionally; the connection side needs c_hat = c_hat^id
    let all_pass = entries.iter().all(|e| e.stokes_real);
    let mut files = vec![write_json(&r.out, "monodromy.json", "monodromy", &entries)?];
    if r.format == Format::Csv {
        let d = r.rank.d();
        let mut header: Vec<String> = (0..r.rank.np1()).map(|i| format!("m_{i}")).collect();
        header.extend((1..=d).map(|i| format!("s_{i}")));
        header.extend((0..r.rank.np1()).map(|i| format!("e_{i}")));
        let rows = entries
            .iter()
            .map(|e| e.m.iter().chain(&e.s_essential).chain(&e.e).map(|v| fmt_e12(*v)).collect())
            .collect();
        files.push(write_csv(&r.out, "monodromy.csv", &Table { header, rows })?);
    }
    Ok(Outcome { files, all_pass, strict: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub nplus1: usize,
    pub m: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub nodes: usize,
    pub converged: bool,
    pub newton_iterations: usize,
    pub continuation_stages: usize,
    pub residual_norm: f64,
    pub residual_unscaled: f64,
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
}

fn cmd_solve(r: &Resolved) -> Result<Outcome, CliError> {
    let opts = SolverOptions::default();
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let many = r.data.len() > 1;
    for (idx, data) in r.data.iter().enumerate() {
        let red = toda_solver::assemble_tt_toda_on(r.rank, &data.m, r.smin, r.smax, r.nodes)?;
        log::info!("solving n+1 = {} m = {:?} on {} nodes", r.rank.np1(), data.m, r.nodes);
        let sol = toda_solver::solve_bvp(&red.problem, &opts)?;
        let n_eq = sol.u.nrows();
        let mut header = vec!["s".to_string()];
        header.extend((1..=n_eq).map(|i| format!("u_{i}")));
        let rows = (0..sol.grid.len())
            .map(|j| std::iter::once(sol.grid[j]).chain((0..n_eq).map(|i| sol.u[(i, j)])).map(fmt_e12).collect())
            .collect();
        let stem = if many { format!("solve_{idx}") } else { "solve".to_string() };
        files.push(write_csv(&r.out, &format!("{stem}.csv"), &Table { header, rows })?);
        let (fit, fit_error) = match asymptotics::fit_both_ends(&red, &sol) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        summaries.push(SolveSummary {
            nplus1: r.rank.np1(),
            m: data.m.clone(),
            gamma: red.problem.gamma.clone(),
            s_min: r.smin,
            s_max: r.smax,
            nodes: r.nodes,
            converged: sol.converged,
            newton_iterations: sol.newton_iterations,
            continuation_stages: sol.continuation_stages,
            residual_norm: sol.residual_norm,
            residual_unscaled: sol.residual_unscaled,
            fit,
            fit_error,
        });
    }
    let all_pass = summaries.iter().all(|s| s.converged && s.fit.is_some());
    files.push(write_json(&r.out, "solve_fit.json", "solve", &summaries)?);
    Ok(Outcome { files, all_pass, strict: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectionCheck {
    pub reports: Vec<ConnectionReport>,
    pub all_pass: bool,
}

fn cmd_connection_check(r: &Resolved) -> Result<Outcome, CliError> {
    let ms: Vec<Vec<f64>> = r.data.iter().map(|d| d.m.clone()).collect();
    let reports = asymptotics::connection_sweep(r.rank, &ms, &SolverOptions::default())
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let all_pass = reports.iter().all(|x| x.all_pass);
    let mut files = vec![write_json(&r.out, "connection_check.json", "connection-check", &ConnectionCheck { reports: reports.clone(), all_pass })?];
    if r.format == Format::Csv {
        let header = ["m", "quantity", "closed_form", "fitted", "error", "tolerance", "pass"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for rep in &reports {
            let m = rep.m.iter().map(|v| fmt_e12(*v)).collect::<Vec<_>>().join(";");
            for row in &rep.rows {
                rows.push(vec![
                    m.clone(),
                    row.quantity.clone(),
                    fmt_e12(row.closed_form),
                    fmt_e12(row.fitted),
                    fmt_e12(row.error),
                    fmt_e12(row.tolerance),
                    row.pass.to_string(),
                ]);
            }
        }
        files.push(write_csv(&r.out, "connection_check.csv", &Table { header, rows })?);
    }
    Ok(Outcome { files, all_pass, strict: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct OdeRow {
    pub quantity: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OdeVerify {
    pub nplus1: usize,
    pub m: Vec<f64>,
    pub rows: Vec<OdeRow>,
    pub max_stokes_error: f64,
    pub d1_relative_error: f64,
    pub max_det_defect: f64,
    pub d1_numeric: MatrixJson,
    pub d1_closed_form: MatrixJson,
    pub all_pass: bool,
}

/// Entrywise tolerance for numeric Stokes factors and relative tolerance for `D_1`.
pub const ODE_TOL: f64 = 1e-6;

pub fn ode_verify_entry(data: &AsymptoticData) -> Result<OdeVerify, CliError> {
    let rank = data.rank;
    let sys = OdeSystem::normalized(rank, &data.m)?;
    let num = linear_ode::numeric_monodromy(&sys, &CanonicalOptions::default())?;
    let s = spectral::stokes_params(data)?;
    let conn = spectral::build_connection(data)?;
    let mut rows = Vec::new();
    for (ray, q) in &num.q_num {
        let err = max_abs_diff(q, &spectral::stokes_factor_zero(*ray, &s)?);
        rows.push(OdeRow { quantity: format!("Q_{}", ray.label()), error: err, tolerance: ODE_TOL, pass: err <= ODE_TOL });
    }
    let d1_err = max_abs_diff(&num.d1_num, &conn.d1_cal) / max_abs(&conn.d1_cal);
    rows.push(OdeRow { quantity: "D_1".into(), error: d1_err, tolerance: ODE_TOL, pass: d1_err <= ODE_TOL });
    let max_stokes_error = rows[..rows.len() - 1].iter().map(|r| r.error).fold(0.0, f64::max);
    Ok(OdeVerify {
        nplus1: rank.np1(),
        m: data.m.clone(),
        all_pass: rows.iter().all(|r| r.pass),
        rows,
        max_stokes_error,
        d1_relative_error: d1_err,
        max_det_defect: num.max_det_defect,
        d1_numeric: MatrixJson::from(&num.d1_num),
        d1_closed_form: MatrixJson::from(&conn.d1_cal),
    })
}

fn cmd_ode_verify(r: &Resolved) -> Result<Outcome, CliError> {
    use rayon::prelude::*;
    let entries = r.data.par_iter().map(ode_verify_entry).collect::<Result<Vec<_>, _>>()?;
    let all_pass = entries.iter().all(|e| e.all_pass);
    let mut files = vec![write_json(&r.out, "ode_verify.json", "ode-verify", &entries)?];
    if r.format == Format::Csv {
        let header = ["m", "quantity", "error", "tolerance", "pass"].map(String::from).to_vec();
        let rows = entries
            .iter()
            .flat_map(|e| {
                let m = e.m.iter().map(|v| fmt_e12(*v)).collect::<Vec<_>>().join(";");
                e.rows.iter().map(move |row| {
                    vec![m.clone(), row.quantity.clone(), fmt_e12(row.error), fmt_e12(row.tolerance), row.pass.to_string()]
                })
            })
            .collect();
        files.push(write_csv(&r.out, "ode_verify.csv", &Table { header, rows })?);
    }
    Ok(Outcome { files, all_pass, strict: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct MellinSample {
    pub zeta_abs: f64,
    pub zeta_arg: f64,
    pub quadrature_re: f64,
    pub quadrature_im: f64,
    pub series_re: f64,
    pub series_im: f64,
    pub relative_difference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LaplaceSample {
    pub zeta: f64,
    pub ratio_error: f64,
    pub band: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MellinReport {
    pub nplus1: usize,
    pub m: Vec<f64>,
    pub b: Vec<f64>,
    pub samples: Vec<MellinSample>,
    pub max_overlap_difference: f64,
    pub overlap_tolerance: f64,
    pub ode_residual: f64,
    pub ode_tolerance: f64,
    pub shift_residual: f64,
    pub scalar_residual: f64,
    pub laplace: Vec<LaplaceSample>,
    pub all_pass: bool,
}

pub const MELLIN_OVERLAP_TOL: f64 = 1e-8;
pub const MELLIN_ODE_TOL: f64 = 1e-6;
/// `(zeta, band)` pairs for the small-`zeta` Laplace check; the band is `3 zeta`.
pub const LAPLACE_SAMPLES: [(f64, f64); 2] = [(0.05, 0.15), (0.01, 0.03)];

pub fn mellin_entry(data: &AsymptoticData, zetas: &[f64], args: &[f64]) -> Result<MellinReport, CliError> {
    let rank = data.rank;
    let params = MellinParams::from_m(rank, &data.m)?;
    let policy = EvalPolicy::for_rank(rank);
    let mut samples = Vec::new();
    for &z in zetas {
        if !(z > 0.0) {
            return Err(CliError::Validation(format!("|zeta| must be positive, got {z}")));
        }
        for &a in args {
            let lz = c(z.ln(), a);
            let q = mellin::g_quadrature(&params, lz, QuadratureOptions::default())?;
            let s = mellin::g_residue_series(&params, lz)?;
            samples.push(MellinSample {
                zeta_abs: z,
                zeta_arg: a,
                quadrature_re: q.re,
                quadrature_im: q.im,
                series_re: s.re,
                series_im: s.im,
                relative_difference: (q - s).norm() / s.norm(),
            });
        }
    }
    let max_overlap_difference = samples.iter().map(|s| s.relative_difference).fold(0.0, f64::max);
    let lz_ref = c(0.0, 0.1);
    let ode_residual = mellin::exact_solution_residual(data, lz_ref, &policy)?;
    let shift = mellin::shift_chain_check(&params, lz_ref, &policy)?;
    let mut laplace = Vec::new();
    for (z, band) in LAPLACE_SAMPLES {
        let lz = c(z.ln(), 0.0);
        let ratio = mellin::g_quadrature(&params, lz, QuadratureOptions::default())? / mellin::g_laplace(&params, lz);
        let err = (ratio - 1.0).norm();
        laplace.push(LaplaceSample { zeta: z, ratio_error: err, band, pass: err < band });
    }
    let all_pass = max_overlap_difference <= MELLIN_OVERLAP_TOL
        && ode_residual <= MELLIN_ODE_TOL
        && shift.scalar_residual <= MELLIN_ODE_TOL
        && laplace.iter().all(|l| l.pass);
    Ok(MellinReport {
        nplus1: rank.np1(),
        m: data.m.clone(),
        b: params.b.clone(),
        samples,
        max_overlap_difference,
        overlap_tolerance: MELLIN_OVERLAP_TOL,
        ode_residual,
        ode_tolerance: MELLIN_ODE_TOL,
        shift_residual: shift.max_shift_residual,
        scalar_residual: shift.scalar_residual,
        laplace,
        all_pass,
    })
}

fn cmd_mellin(r: &Resolved) -> Result<Outcome, CliError> {
    let entries = r.data.iter().map(|d| mellin_entry(d, &r.zeta, &r.arg)).collect::<Result<Vec<_>, _>>()?;
    let all_pass = entries.iter().all(|e| e.all_pass);
    let mut files = vec![write_json(&r.out, "mellin.json", "mellin", &entries)?];
    if r.format == Format::Csv {
        let header = ["m", "zeta_abs", "zeta_arg", "quadrature_re", "quadrature_im", "series_re", "series_im", "relative_difference"]
            .map(String::from)
            .to_vec();
        let rows = entries
            .iter()
            .flat_map(|e| {
                let m = e.m.iter().map(|v| fmt_e12(*v)).collect::<Vec<_>>().join(";");
                e.samples.iter().map(move |s| {
                    let mut row = vec![m.clone()];
                    row.extend(
                        [s.zeta_abs, s.zeta_arg, s.quadrature_re, s.quadrature_im, s.series_re, s.series_im, s.relative_difference]
                            .map(fmt_e12),
                    );
                    row
                })
            })
            .collect();
        files.push(write_csv(&r.out, "mellin.csv", &Table { header, rows })?);
    }
    Ok(Outcome { files, all_pass, strict: false })
}

#[derive(Clone, Debug, Serialize)]
pub struct JumpReport {
    pub nplus1: usize,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub contour: ContourSpec,
    pub contour_well_formed: bool,
    pub conjugation_residual: f64,
    pub opposite_sector_residual: f64,
    pub reality_residual: f64,
    pub z_chain_defect: f64,
    pub period_residual: f64,
    pub identity_tolerance: f64,
    pub period_tolerance: f64,
    pub bound: JumpBound,
    pub reconstruction: Option<Reconstruction>,
    pub all_pass: bool,
}

pub const JUMP_TOL: f64 = 1e-12;
pub const PERIOD_TOL: f64 = 1e-10;

pub fn jump_entry(data: &AsymptoticData, x: f64) -> Result<JumpReport, CliError> {
    let rank = data.rank;
    let s: StokesData = spectral::stokes_params(data)?;
    let contour = ContourSpec::new(rank, x)?;
    let mut conj: f64 = 0.0;
    for ray in &contour.infinity_rays {
        for l in [0.3, 1.0, 2.5] {
            let a = jump_data::build_jump(ray.index, l, &s, x)?;
            let b = jump_data::build_jump_by_conjugation(ray.index, l, &s, x)?;
            conj = conj.max(max_abs_diff(&a, &b));
        }
    }
    let e1 = spectral::e1_identity(&s)?;
    let chain = jump_data::z_matrix_chain(&e1, &s)?;
    let z_defect = jump_data::z_chain_defect(&chain);
    let opp = jump_data::opposite_sector_residual(&s)?;
    let real = jump_data::reality_residual(&s)?;
    let period = jump_data::period_factorization_residual(&e1, &s)?;
    let bound = jump_data::jump_decay_bound(&s, &[3.0, 5.0, 7.0, 10.0])?;
    let reconstruction = if x >= RECONSTRUCTION_MIN_X { Some(jump_data::first_order_reconstruction(&s, x)?) } else { None };
    let well = contour.is_well_formed();
    let all_pass = well && conj <= JUMP_TOL && opp <= JUMP_TOL && real <= JUMP_TOL && z_defect <= JUMP_TOL && period <= PERIOD_TOL;
    Ok(JumpReport {
        nplus1: rank.np1(),
        m: data.m.clone(),
        s: s.s.clone(),
        contour,
        contour_well_formed: well,
        conjugation_residual: conj,
        opposite_sector_residual: opp,
        reality_residual: real,
        z_chain_defect: z_defect,
        period_residual: period,
        identity_tolerance: JUMP_TOL,
        period_tolerance: PERIOD_TOL,
        bound,
        reconstruction,
        all_pass,
    })
}

fn cmd_jump_check(r: &Resolved) -> Result<Outcome, CliError> {
    let entries = r.data.iter().map(|d| jump_entry(d, r.x)).collect::<Result<Vec<_>, _>>()?;
    let all_pass = entries.iter().all(|e| e.all_pass);
    let mut files = vec![write_json(&r.out, "jump_check.json", "jump-check", &entries)?];
    if r.format == Format::Csv {
        let header = ["m", "x", "sup_norm"].map(String::from).to_vec();
        let rows = entries
            .iter()
            .flat_map(|e| {
                let m = e.m.iter().map(|v| fmt_e12(*v)).collect::<Vec<_>>().join(";");
                e.bound.sup_norms.iter().map(move |(x, v)| vec![m.clone(), fmt_e12(*x), fmt_e12(*v)])
            })
            .collect();
        files.push(write_csv(&r.out, "jump_check.csv", &Table { header, rows })?);
    }
    Ok(Outcome { files, all_pass, strict: false })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if !outcome.all_pass {
                log::warn!("some report flags failed");
                if outcome.strict {
                    eprintln!("tt-toda: strict mode: report flags failed");
                    return STRICT_FAILURE;
                }
            }
            0
        }
        Err(e) => {
            eprintln!("tt-toda: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (args, run): (&InputArgs, fn(&Resolved) -> Result<Outcome, CliError>) = match &cli.command {
        Command::Monodromy(a) => (a, cmd_monodromy),
        Command::Solve(a) => (a, cmd_solve),
        Command::ConnectionCheck(a) => (a, cmd_connection_check),
        Command::OdeVerify(a) => (a, cmd_ode_verify),
        Command::Mellin(a) => (a, cmd_mellin),
        Command::JumpCheck(a) => (a, cmd_jump_check),
    };
    let resolved = resolve(cli, args, &cfg)?;
    fs::create_dir_all(&resolved.out)?;
    let mut outcome = run(&resolved)?;
    outcome.strict = resolved.strict;
    Ok(outcome)
}
