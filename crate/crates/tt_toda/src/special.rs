//! Gamma and log-gamma, real and complex, via the Lanczos approximation
//! (g = 7, nine coefficients) with the reflection formula on the left half-plane.

use std::f64::consts::PI;

use crate::error::{Result, TodaError};
use crate::linalg::C64;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn is_pole(x: f64) -> bool {
    x <= 0.0 && x == x.round()
}

pub fn gamma(x: f64) -> Result<f64> {
    if is_pole(x) {
        return Err(TodaError::GammaPole(x));
    }
    if x < 0.5 {
        return Ok(PI / ((PI * x).sin() * gamma(1.0 - x)?));
    }
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    let t = z + LANCZOS_G + 0.5;
    for (k, &p) in LANCZOS.iter().enumerate().skip(1) {
        a += p / (z + k as f64);
    }
    Ok((2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * a)
}

/// `log |Gamma(x)|` for real `x`.
pub fn ln_gamma_abs(x: f64) -> Result<f64> {
    if is_pole(x) {
        return Err(TodaError::GammaPole(x));
    }
    if x < 0.5 {
        return Ok(PI.ln() - (PI * x).sin().abs().ln() - ln_gamma_abs(1.0 - x)?);
    }
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    let t = z + LANCZOS_G + 0.5;
    for (k, &p) in LANCZOS.iter().enumerate().skip(1) {
        a += p / (z + k as f64);
    }
    Ok(HALF_LN_2PI + (z + 0.5) * t.ln() - t + a.ln())
}

/// Complex `log Gamma(z)` up to an additive multiple of `2 pi i`; suitable for
/// products of gamma values that are exponentiated afterwards.
pub fn cln_gamma(z: C64) -> Result<C64> {
    if z.im == 0.0 && is_pole(z.re) {
        return Err(TodaError::GammaPole(z.re));
    }
    if z.re < 0.5 {
        let w = z * PI;
        return Ok(C64::new(PI.ln(), 0.0) - ln_sin(w) - cln_gamma(C64::new(1.0, 0.0) - z)?);
    }
    let zm = z - 1.0;
    let mut a = C64::new(LANCZOS[0], 0.0);
    let t = zm + LANCZOS_G + 0.5;
    for (k, &p) in LANCZOS.iter().enumerate().skip(1) {
        a += p / (zm + k as f64);
    }
    Ok(C64::new(HALF_LN_2PI, 0.0) + (zm + 0.5) * t.ln() - t + a.ln())
}

pub fn cgamma(z: C64) -> Result<C64> {
    Ok(cln_gamma(z)?.exp())
}

/// `log sin(w)` without overflow for large `|Im w|`.
fn ln_sin(w: C64) -> C64 {
    let i = C64::new(0.0, 1.0);
    if w.im > 1.0 {
        -i * w + C64::new(0.0, 0.5).ln() + (C64::new(1.0, 0.0) - (i * w * 2.0).exp()).ln()
    } else if w.im < -1.0 {
        i * w + C64::new(0.0, -0.5).ln() + (C64::new(1.0, 0.0) - (-i * w * 2.0).exp()).ln()
    } else {
        w.sin().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((gamma(5.0).unwrap() - 24.0).abs() < 1e-12);
        assert!((gamma(0.5).unwrap() - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(-0.5).unwrap() + 2.0 * PI.sqrt()).abs() < 1e-13);
        assert!((ln_gamma_abs(100.0).unwrap() - 359.134_205_369_575_4).abs() < 1e-10);
        assert!(gamma(-2.0).is_err());
        assert!(gamma(0.0).is_err());
    }

    #[test]
    fn complex_matches_real_and_recurrence() {
        for &x in &[0.3, 1.7, 4.2, -1.3] {
            let g = cgamma(C64::new(x, 0.0)).unwrap();
            assert!((g.re - gamma(x).unwrap()).abs() < 1e-12 * g.norm().max(1.0));
            assert!(g.im.abs() < 1e-12 * g.norm().max(1.0));
        }
        let z = C64::new(0.3, 2.5);
        let lhs = cgamma(z + 1.0).unwrap();
        let rhs = cgamma(z).unwrap() * z;
        assert!((lhs - rhs).norm() < 1e-13 * lhs.norm());
    }

    #[test]
    fn large_imaginary_part_does_not_overflow() {
        // |Gamma(1/2 + iy)|^2 = pi / cosh(pi y)
        for &y in &[10.0, 60.0, -80.0] {
            let z = C64::new(0.5, y);
            let lg = cln_gamma(z).unwrap();
            let want = 0.5 * (PI.ln() - (PI * y.abs() + (0.5 + 0.5 * (-2.0 * PI * y.abs()).exp()).ln()));
            assert!((lg.re - want).abs() < 1e-10, "y={y}: {} vs {}", lg.re, want);
            let lg2 = cln_gamma(C64::new(-2.3, y)).unwrap();
            assert!(lg2.re.is_finite());
        }
    }
}
