//! Structure matrices of `sl_{n+1}`, the automorphisms `tau`, `sigma`, `c`,
//! `theta`, and the real-form membership test.
//!
//! Indices run over `0..=n` with `N = n + 1` the matrix size.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TodaError};
use crate::linalg::{check_square, inverse, max_abs_diff, CMat, C64};

pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Matrix size `N = n + 1` together with its parity and `d = floor(N / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rank {
    np1: usize,
    parity: Parity,
    d: usize,
}

impl Rank {
    pub const MAX: usize = 16;

    pub fn new(np1: usize) -> Result<Self> {
        if !(2..=Self::MAX).contains(&np1) {
            return Err(TodaError::InvalidInput(format!(
                "n+1 must lie in 2..={}, got {np1}",
                Self::MAX
            )));
        }
        let parity = if np1 % 2 == 0 { Parity::Even } else { Parity::Odd };
        Ok(Rank { np1, parity, d: np1 / 2 })
    }

    pub fn np1(&self) -> usize {
        self.np1
    }

    pub fn n(&self) -> usize {
        self.np1 - 1
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn is_even(&self) -> bool {
        self.parity == Parity::Even
    }

    /// `omega^x = exp(2 pi i x / N)` on the principal branch.
    pub fn omega_pow(&self, x: f64) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * x / self.np1 as f64)
    }

    pub fn omega(&self) -> C64 {
        self.omega_pow(1.0)
    }
}

/// The constant matrices used throughout: `d = diag(omega^j)`, its principal
/// square root, the Fourier matrix `(omega^{ij})`, the anti-diagonal flip, the
/// cyclic shift and its signed variant, the real-form conjugator and the
/// reversal permutation.
#[derive(Clone, Debug)]
pub struct StructureMatrices {
    pub rank: Rank,
    pub omega: C64,
    pub d_mat: CMat,
    pub half_d: CMat,
    pub fourier: CMat,
    pub delta: CMat,
    pub pi: CMat,
    pub pi_hat: CMat,
    pub real_form: CMat,
    pub c_perm: CMat,
}

impl StructureMatrices {
    pub fn new(rank: Rank) -> Self {
        let n1 = rank.np1();
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let d_mat = diag_power(rank, 1.0);
        let half_d = diag_power(rank, 0.5);
        let fourier = CMat::from_fn(n1, n1, |i, j| rank.omega_pow(((i * j) % n1) as f64));
        let delta = CMat::from_fn(n1, n1, |i, j| if i + j == n1 - 1 { one } else { zero });
        let pi = CMat::from_fn(n1, n1, |i, j| if (i + 1) % n1 == j { one } else { zero });
        let pi_hat = CMat::from_fn(n1, n1, |i, j| {
            if i + 1 == j {
                one
            } else if i == n1 - 1 && j == 0 {
                -one
            } else {
                zero
            }
        });
        let scale = C64::new(0.5, -0.5);
        let real_form = CMat::from_fn(n1, n1, |i, j| {
            let mut v = zero;
            if i == j {
                v += one;
            }
            if i + j == n1 - 1 {
                v += C64::new(0.0, 1.0);
            }
            v * scale
        });
        let c_perm = CMat::from_fn(n1, n1, |i, j| if (i + j) % n1 == 0 { one } else { zero });
        StructureMatrices {
            rank,
            omega: rank.omega(),
            d_mat,
            half_d,
            fourier,
            delta,
            pi,
            pi_hat,
            real_form,
            c_perm,
        }
    }

    /// The shift entering the product of two Stokes factors: `pi_hat` for even
    /// `N`, `pi` for odd `N`.
    pub fn monodromy_shift(&self) -> &CMat {
        if self.rank.is_even() {
            &self.pi_hat
        } else {
            &self.pi
        }
    }

    /// `d^p = diag(omega^{j p})`, principal branch.
    pub fn d_pow(&self, p: f64) -> CMat {
        diag_power(self.rank, p)
    }
}

fn diag_power(rank: Rank, p: f64) -> CMat {
    let n1 = rank.np1();
    CMat::from_fn(n1, n1, |i, j| {
        if i == j {
            rank.omega_pow(i as f64 * p)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Whether an automorphism acts by its Lie-algebra rule or its group rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Algebra,
    Group,
}

pub fn apply_tau(x: &CMat, rank: Rank) -> Result<CMat> {
    check_square(x, rank.np1())?;
    let s = StructureMatrices::new(rank);
    let dinv = s.d_pow(-1.0);
    Ok(dinv * x * &s.d_mat)
}

pub fn apply_sigma(x: &CMat, rank: Rank, variant: Variant) -> Result<CMat> {
    check_square(x, rank.np1())?;
    let s = StructureMatrices::new(rank);
    match variant {
        Variant::Algebra => Ok(-(&s.delta * x.transpose() * &s.delta)),
        Variant::Group => {
            let inv_t = inverse(&x.transpose(), "sigma on group element")?;
            Ok(&s.delta * inv_t * &s.delta)
        }
    }
}

/// `c(X) = Delta conj(X) Delta`; identical rule on algebra and group.
pub fn apply_c(x: &CMat, rank: Rank) -> Result<CMat> {
    check_square(x, rank.np1())?;
    let s = StructureMatrices::new(rank);
    Ok(&s.delta * x.map(|z| z.conj()) * &s.delta)
}

pub fn apply_theta(x: &CMat) -> CMat {
    x.map(|z| z.conj())
}

/// Membership in the real form fixed by `c`: `|Delta conj(V) Delta - V|_max <= tol`.
pub fn is_sl_delta_real(v: &CMat, tol: f64) -> bool {
    if v.nrows() != v.ncols() || v.nrows() < 2 {
        return false;
    }
    let n1 = v.nrows();
    let flipped = CMat::from_fn(n1, n1, |i, j| v[(n1 - 1 - i, n1 - 1 - j)].conj());
    max_abs_diff(&flipped, v) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, matrix_power, max_abs_diff};

    #[test]
    fn two_by_two_structure() {
        let s = StructureMatrices::new(Rank::new(2).unwrap());
        let want = CMat::from_row_slice(2, 2, &[c(1., 0.), c(1., 0.), c(1., 0.), c(-1., 0.)]);
        assert!(max_abs_diff(&s.fourier, &want) < 1e-15);
        assert!((s.d_mat[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(max_abs_diff(&s.c_perm, &CMat::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn four_by_four_d() {
        let s = StructureMatrices::new(Rank::new(4).unwrap());
        let want = [c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)];
        for (j, w) in want.iter().enumerate() {
            assert!((s.d_mat[(j, j)] - w).norm() < 1e-15);
        }
    }

    #[test]
    fn shift_diagonalised_by_fourier() {
        for n1 in 2..=9 {
            let s = StructureMatrices::new(Rank::new(n1).unwrap());
            let rhs = &s.fourier * &s.d_mat * s.fourier.clone().try_inverse().unwrap();
            assert!(max_abs_diff(&s.pi, &rhs) < 1e-13, "n+1={n1}");
        }
    }

    #[test]
    fn reversal_and_fourier_identities() {
        for n1 in 2..=9 {
            let s = StructureMatrices::new(Rank::new(n1).unwrap());
            let n1f = n1 as f64;
            let sq = &s.fourier * &s.fourier / C64::new(n1f, 0.0);
            assert!(max_abs_diff(&sq, &s.c_perm) < 1e-12);
            let conj_inv = s.fourier.map(|z| z.conj()).try_inverse().unwrap();
            assert!(max_abs_diff(&(&s.fourier * conj_inv), &s.c_perm) < 1e-12);
            let lhs = &s.fourier * &s.delta;
            let rhs = s.d_pow(-1.0) * s.fourier.clone().try_inverse().unwrap() * C64::new(n1f, 0.0);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
            let dcd = &s.d_mat * &s.c_perm * &s.d_mat;
            assert!(max_abs_diff(&dcd, &s.c_perm) < 1e-12);
        }
    }

    #[test]
    fn signed_shift_relation_and_powers() {
        for n1 in 2..=9 {
            let r = Rank::new(n1).unwrap();
            let s = StructureMatrices::new(r);
            let rhs = s.d_pow(-0.5) * &s.pi * &s.half_d * r.omega_pow(-0.5);
            assert!(max_abs_diff(&s.pi_hat, &rhs) < 1e-13);
            let id = CMat::identity(n1, n1);
            assert!(max_abs_diff(&matrix_power(&s.pi, n1), &id) < 1e-12);
            // the signed shift always cycles to -I; the odd case uses the plain shift instead
            assert!(max_abs_diff(&matrix_power(&s.pi_hat, n1), &(&id * C64::new(-1.0, 0.0))) < 1e-12);
            let sign = if r.is_even() { -1.0 } else { 1.0 };
            assert!(max_abs_diff(&matrix_power(s.monodromy_shift(), n1), &(id * C64::new(sign, 0.0))) < 1e-12);
        }
    }

    #[test]
    fn automorphism_examples() {
        let r = Rank::new(3).unwrap();
        let s = StructureMatrices::new(r);
        assert!(max_abs_diff(&apply_tau(&s.d_mat, r).unwrap(), &s.d_mat) < 1e-15);
        let id = CMat::identity(3, 3);
        assert!(max_abs_diff(&apply_sigma(&id, r, Variant::Group).unwrap(), &id) < 1e-15);
        assert!(max_abs_diff(&apply_c(&s.delta, r).unwrap(), &s.delta) < 1e-15);
        assert!(apply_tau(&CMat::identity(2, 2), r).is_err());
    }

    #[test]
    fn real_form_membership_examples() {
        let i = c(0.0, 1.0);
        assert!(is_sl_delta_real(&CMat::identity(2, 2), 1e-12));
        let v = CMat::from_row_slice(2, 2, &[i, c(0., 0.), c(0., 0.), -i]);
        assert!(is_sl_delta_real(&v, 1e-12));
        let w = CMat::from_row_slice(2, 2, &[i, c(0., 0.), c(0., 0.), i]);
        assert!(!is_sl_delta_real(&w, 1e-12));
    }
}
