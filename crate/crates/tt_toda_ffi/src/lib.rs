//! C ABI over `tt_toda`: opaque handles, status codes and caller-owned buffers.
//!
//! Every function returns a [`TtStatus`]. Array outputs are copied into a
//! caller buffer of length `cap`; the required length is always stored in
//! `*len_out`, so a first call with `cap = 0` sizes the buffer. The message of
//! the last failure on the calling thread is available from
//! [`tt_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tt_toda::algebra::Rank;
use tt_toda::asymptotics;
use tt_toda::error::TodaError;
use tt_toda::spectral::{self, AsymptoticData, StokesData};
use tt_toda::toda_solver::{self, RadialSolution, SolverOptions, TodaReduction};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NonGeneric = 3,
    DimensionMismatch = 4,
    GammaPole = 5,
    Singular = 6,
    Integration = 7,
    NotConverged = 8,
    Domain = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Monodromy data for one asymptotic vector `m`.
pub struct TtMonodromy {
    data: AsymptoticData,
    stokes: StokesData,
}

/// A converged radial solution together with its reduction.
pub struct TtSolution {
    reduction: TodaReduction,
    solution: RadialSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut buf = msg.replace('\0', " ").into_bytes();
        buf.push(0);
        *e.borrow_mut() = buf;
    });
}

fn status_of(err: &TodaError) -> TtStatus {
    match err {
        TodaError::InvalidInput(_) => TtStatus::InvalidInput,
        TodaError::NonGeneric(_) => TtStatus::NonGeneric,
        TodaError::DimensionMismatch { .. } => TtStatus::DimensionMismatch,
        TodaError::GammaPole(_) => TtStatus::GammaPole,
        TodaError::Singular(_) => TtStatus::Singular,
        TodaError::Integration { .. } => TtStatus::Integration,
        TodaError::NotConverged(_) => TtStatus::NotConverged,
        TodaError::Domain(_) => TtStatus::Domain,
    }
}

enum Failure {
    Toda(TodaError),
    Status(TtStatus, String),
}

impl From<TodaError> for Failure {
    fn from(e: TodaError) -> Self {
        Failure::Toda(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> TtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtStatus::Ok,
        Ok(Err(Failure::Toda(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            TtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(TtStatus::NullPointer, format!("null pointer: {what}"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable doubles.
unsafe fn read_slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `out` must be null or writable for `cap` doubles; `len_out` must be writable.
unsafe fn write_slice(values: &[f64], out: *mut f64, cap: usize, len_out: *mut usize) -> Result<(), Failure> {
    if len_out.is_null() {
        return Err(null("len_out"));
    }
    *len_out = values.len();
    if cap < values.len() {
        return Err(Failure::Status(
            TtStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn full_m(rank: Rank, m: &[f64]) -> Result<Vec<f64>, Failure> {
    if m.len() == rank.np1() {
        Ok(m.to_vec())
    } else {
        Ok(asymptotics::extend_antisymmetric(m, rank)?)
    }
}

/// Builds monodromy data from `m` (the first `d` entries or all `n+1`) with
/// `c_hat = c_hat^id`.
///
/// # Safety
/// `m` must point to `m_len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tt_monodromy_new(nplus1: usize, m: *const f64, m_len: usize, out: *mut *mut TtMonodromy) -> TtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let rank = Rank::new(nplus1)?;
        let m = full_m(rank, read_slice(m, m_len, "m")?)?;
        let data = AsymptoticData::from_m(rank, &m, None)?;
        let data = data.with_chat(spectral::chat_id(&m, rank)?);
        let stokes = spectral::stokes_params(&data)?;
        *out = Box::into_raw(Box::new(TtMonodromy { data, stokes }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`tt_monodromy_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn tt_monodromy_free(handle: *mut TtMonodromy) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Stokes parameters `s_0..s_(n+1)`.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_monodromy_stokes(handle: *const TtMonodromy, out: *mut f64, cap: usize, len_out: *mut usize) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_slice(&h.stokes.s, out, cap, len_out)
    })
}

/// Eigenvalues `e_0..e_n` of the connection matrix.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_monodromy_connection_eigs(
    handle: *const TtMonodromy,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_slice(&spectral::connection_eigs(&h.data)?, out, cap, len_out)
    })
}

/// The constants `c_hat^id_0..c_hat^id_n` of the global solution.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_monodromy_chat(handle: *const TtMonodromy, out: *mut f64, cap: usize, len_out: *mut usize) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_slice(&h.data.chat, out, cap, len_out)
    })
}

/// Solves the radial problem on `nodes` points of `[s_min, s_max]` in `s = log r`.
///
/// # Safety
/// `m` must point to `m_len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tt_solve(
    nplus1: usize,
    m: *const f64,
    m_len: usize,
    s_min: f64,
    s_max: f64,
    nodes: usize,
    out: *mut *mut TtSolution,
) -> TtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let rank = Rank::new(nplus1)?;
        let m = full_m(rank, read_slice(m, m_len, "m")?)?;
        let reduction = toda_solver::assemble_tt_toda_on(rank, &m, s_min, s_max, nodes)?;
        let solution = toda_solver::solve_bvp(&reduction.problem, &SolverOptions::default())?;
        if !solution.converged {
            return Err(Failure::Toda(TodaError::NotConverged(format!("residual {:.3e}", solution.residual_norm))));
        }
        *out = Box::into_raw(Box::new(TtSolution { reduction, solution }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`tt_solve`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_free(handle: *mut TtSolution) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of unknown components and grid nodes.
///
/// # Safety
/// `handle` must be live and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_shape(handle: *const TtSolution, components: *mut usize, nodes: *mut usize) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if components.is_null() || nodes.is_null() {
            return Err(null("shape output"));
        }
        *components = h.solution.u.nrows();
        *nodes = h.solution.u.ncols();
        Ok(())
    })
}

/// Grid nodes in `s = log r`.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_grid(handle: *const TtSolution, out: *mut f64, cap: usize, len_out: *mut usize) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write_slice(&h.solution.grid, out, cap, len_out)
    })
}

/// Values of component `index` (zero-based) at every node.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_component(
    handle: *const TtSolution,
    index: usize,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if index >= h.solution.u.nrows() {
            return Err(Failure::Status(TtStatus::InvalidInput, format!("component {index} out of range")));
        }
        write_slice(&h.solution.component(index), out, cap, len_out)
    })
}

/// Stokes parameters `s_1..s_d` fitted from the far-field decay.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_fit_stokes(handle: *const TtSolution, out: *mut f64, cap: usize, len_out: *mut usize) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let fit = asymptotics::fit_both_ends(&h.reduction, &h.solution)?;
        write_slice(&fit.s_fit, out, cap, len_out)
    })
}

/// Origin constants fitted near `r = 0`; compare with `-log c_hat^id`.
///
/// # Safety
/// `handle` must be live; see the module docs for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn tt_solution_fit_constants(
    handle: *const TtSolution,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> TtStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let fit = asymptotics::fit_both_ends(&h.reduction, &h.solution)?;
        write_slice(&fit.const_fit, out, cap, len_out)
    })
}

/// NUL-terminated message of the last failure on this thread, or an empty
/// string. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tt_last_error_message() -> *const c_char {
    static EMPTY: &CStr = c"";
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if e.is_empty() {
            EMPTY.as_ptr()
        } else {
            e.as_ptr() as *const c_char
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tt_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_sizing_protocol() {
        let mut h = ptr::null_mut();
        let m = [1.0 / 6.0];
        assert_eq!(unsafe { tt_monodromy_new(2, m.as_ptr(), 1, &mut h) }, TtStatus::Ok);
        let mut len = 0;
        assert_eq!(unsafe { tt_monodromy_stokes(h, ptr::null_mut(), 0, &mut len) }, TtStatus::BufferTooSmall);
        assert_eq!(len, 3);
        let mut buf = vec![0.0; len];
        assert_eq!(unsafe { tt_monodromy_stokes(h, buf.as_mut_ptr(), buf.len(), &mut len) }, TtStatus::Ok);
        assert!((buf[1] + 1.0).abs() < 1e-12);
        unsafe { tt_monodromy_free(h) };
    }

    #[test]
    fn errors_map_to_codes() {
        let mut h = ptr::null_mut();
        let m = [1.5];
        assert_eq!(unsafe { tt_monodromy_new(2, m.as_ptr(), 1, &mut h) }, TtStatus::NonGeneric);
        assert!(h.is_null());
        let msg = unsafe { CStr::from_ptr(tt_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("non-generic"), "{msg}");
        assert_eq!(unsafe { tt_monodromy_new(1, m.as_ptr(), 1, &mut h) }, TtStatus::InvalidInput);
        assert_eq!(unsafe { tt_monodromy_stokes(ptr::null(), ptr::null_mut(), 0, &mut 0) }, TtStatus::NullPointer);
    }
}
