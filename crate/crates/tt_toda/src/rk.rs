//! Adaptive Dormand-Prince 5(4) for complex matrix states.

use crate::error::{Result, TodaError};
use crate::linalg::{CMat, C64};

#[derive(Clone, Copy, Debug)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub min_step: f64,
}

impl Default for RkOptions {
    fn default() -> Self {
        RkOptions { rtol: 1e-12, atol: 1e-14, max_steps: 200_000, min_step: 1e-14 }
    }
}

#[derive(Clone, Debug)]
pub struct RkOutcome {
    pub value: CMat,
    pub accepted: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &CMat, terms: &[(f64, &CMat)], h: f64) -> CMat {
    let mut out = y.clone();
    for (a, k) in terms {
        if *a != 0.0 {
            out.zip_apply(*k, |o, kv| *o += kv * (a * h));
        }
    }
    out
}

fn error_norm(err: &CMat, y0: &CMat, y1: &CMat, opts: &RkOptions) -> f64 {
    let mut worst: f64 = 0.0;
    for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
        let scale = opts.atol + opts.rtol * a.norm().max(b.norm());
        worst = worst.max(e.norm() / scale);
    }
    worst
}

/// Integrates `y' = f(s, y)` from `s0` to `s1` (either direction).
pub fn integrate<F>(f: F, s0: f64, s1: f64, y0: &CMat, opts: &RkOptions) -> Result<RkOutcome>
where
    F: Fn(f64, &CMat) -> CMat,
{
    let span = s1 - s0;
    if span == 0.0 {
        return Ok(RkOutcome { value: y0.clone(), accepted: 0, rejected: 0 });
    }
    let dir = span.signum();
    let mut s = s0;
    let mut y = y0.clone();
    let mut h = span.abs() / 100.0;
    let mut k1 = f(s, &y);
    let (mut accepted, mut rejected) = (0, 0);
    while (s1 - s) * dir > 0.0 {
        if accepted + rejected > opts.max_steps {
            return Err(TodaError::Integration { at: format!("s = {s:.6e}"), reason: "step budget exhausted".into() });
        }
        if h < opts.min_step * span.abs().max(1.0) {
            return Err(TodaError::Integration { at: format!("s = {s:.6e}"), reason: "step size underflow".into() });
        }
        let last = h >= (s1 - s).abs();
        let hs = if last { s1 - s } else { dir * h };
        let k2 = f(s + C2 * hs, &axpy(&y, &[(A21, &k1)], hs));
        let k3 = f(s + C3 * hs, &axpy(&y, &[(A31, &k1), (A32, &k2)], hs));
        let k4 = f(s + C4 * hs, &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], hs));
        let k5 = f(s + C5 * hs, &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], hs));
        let k6 = f(s + hs, &axpy(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], hs));
        let y_new = axpy(&y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], hs);
        let k7 = f(s + hs, &y_new);
        let zero = CMat::from_element(y.nrows(), y.ncols(), C64::new(0.0, 0.0));
        let err = axpy(&zero, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)], hs);
        let en = error_norm(&err, &y, &y_new, opts);
        if !en.is_finite() {
            return Err(TodaError::Integration { at: format!("s = {s:.6e}"), reason: "non-finite state".into() });
        }
        if en <= 1.0 {
            s = if last { s1 } else { s + hs };
            y = y_new;
            k1 = k7;
            accepted += 1;
        } else {
            rejected += 1;
        }
        let factor = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        h = hs.abs() * factor;
    }
    Ok(RkOutcome { value: y, accepted, rejected })
}
