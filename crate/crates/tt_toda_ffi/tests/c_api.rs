use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use tt_toda_ffi::*;

const HEADER: &str = include_str!("../include/tt_toda.h");

fn read(f: impl Fn(*mut f64, usize, *mut usize) -> TtStatus) -> Vec<f64> {
    let mut len = 0;
    assert_eq!(f(ptr::null_mut(), 0, &mut len), TtStatus::BufferTooSmall);
    let mut buf = vec![0.0; len];
    assert_eq!(f(buf.as_mut_ptr(), buf.len(), &mut len), TtStatus::Ok);
    buf
}

#[test]
fn header_declares_every_export() {
    for name in [
        "tt_monodromy_new",
        "tt_monodromy_free",
        "tt_monodromy_stokes",
        "tt_monodromy_connection_eigs",
        "tt_monodromy_chat",
        "tt_solve",
        "tt_solution_free",
        "tt_solution_shape",
        "tt_solution_grid",
        "tt_solution_component",
        "tt_solution_fit_stokes",
        "tt_solution_fit_constants",
        "tt_last_error_message",
        "tt_version",
        "TT_STATUS_BUFFER_TOO_SMALL",
        "typedef struct TtSolution TtSolution",
    ] {
        assert!(HEADER.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", concat!(env!("CARGO_MANIFEST_DIR"), "/include/tt_toda.h")])
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn monodromy_round_trip_through_the_abi() {
    let mut h = ptr::null_mut();
    let m = [0.3, 0.1];
    assert_eq!(unsafe { tt_monodromy_new(4, m.as_ptr(), m.len(), &mut h) }, TtStatus::Ok);
    let s = read(|o, c, l| unsafe { tt_monodromy_stokes(h, o, c, l) });
    let e = read(|o, c, l| unsafe { tt_monodromy_connection_eigs(h, o, c, l) });
    let chat = read(|o, c, l| unsafe { tt_monodromy_chat(h, o, c, l) });
    assert_eq!((s.len(), e.len(), chat.len()), (5, 4, 4));
    // c_hat^id is a positive, reciprocal-symmetric vector
    for i in 0..4 {
        assert!(chat[i] > 0.0);
        assert!((chat[i] * chat[3 - i] - 1.0).abs() < 1e-12);
    }
    unsafe { tt_monodromy_free(h) };
}

#[test]
fn solve_and_fit_through_the_abi() {
    let mut h = ptr::null_mut();
    let m = [0.25];
    let (lo, hi) = (1e-4_f64.ln(), 40_f64.ln());
    assert_eq!(unsafe { tt_solve(2, m.as_ptr(), 1, lo, hi, 4000, &mut h) }, TtStatus::Ok);
    let (mut comps, mut nodes) = (0, 0);
    assert_eq!(unsafe { tt_solution_shape(h, &mut comps, &mut nodes) }, TtStatus::Ok);
    assert_eq!((comps, nodes), (1, 4000));
    let grid = read(|o, c, l| unsafe { tt_solution_grid(h, o, c, l) });
    assert!((grid[0] - lo).abs() < 1e-12 && (grid[nodes - 1] - hi).abs() < 1e-12);
    let u = read(|o, c, l| unsafe { tt_solution_component(h, 0, o, c, l) });
    assert_eq!(u.len(), nodes);
    let s = read(|o, c, l| unsafe { tt_solution_fit_stokes(h, o, c, l) });
    let want = -2.0 * (std::f64::consts::PI * 0.25).sin();
    assert!(((s[0] - want) / want).abs() < 0.02, "{} vs {want}", s[0]);
    let mut len = 0;
    assert_eq!(unsafe { tt_solution_component(h, 5, ptr::null_mut(), 0, &mut len) }, TtStatus::InvalidInput);
    unsafe { tt_solution_free(h) };
}

#[test]
fn failures_leave_null_handles_and_a_message() {
    let mut h = ptr::null_mut();
    let m = [0.1, 0.2, 0.3];
    assert_eq!(unsafe { tt_monodromy_new(4, m.as_ptr(), 3, &mut h) }, TtStatus::DimensionMismatch);
    assert!(h.is_null());
    let msg = unsafe { CStr::from_ptr(tt_last_error_message()) }.to_string_lossy().into_owned();
    assert!(msg.contains("dimension"), "{msg}");
    assert_eq!(unsafe { tt_monodromy_new(4, ptr::null(), 2, &mut h) }, TtStatus::NullPointer);
    let v = unsafe { CStr::from_ptr(tt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
