#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tt_toda::algebra::Rank;
use tt_toda::spectral::validate_m;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rank(n1: usize) -> Rank {
    Rank::new(n1).unwrap()
}

/// Anti-symmetric `m` strictly inside the generic region, drawn by rejection
/// from `[-0.45, 0.45]^d` and kept away from the walls by `margin`.
pub fn generic_m(rng: &mut impl Rng, n1: usize, margin: f64) -> Vec<f64> {
    let r = rank(n1);
    loop {
        let mut m = vec![0.0; n1];
        for i in 0..r.d() {
            let v: f64 = rng.gen_range(-0.45..0.45);
            m[i] = v;
            m[n1 - 1 - i] = -v;
        }
        let wall = (0..n1).map(|i| m[(i + n1 - 1) % n1] - m[i] + 1.0).fold(f64::INFINITY, f64::min);
        if wall > margin && validate_m(r, &m).is_ok() {
            return m;
        }
    }
}

/// Decreasing anti-symmetric `m` with `m_0 < 1/2`, the sector used by the
/// radial solver.
pub fn decreasing_m(rng: &mut impl Rng, n1: usize) -> Vec<f64> {
    let d = n1 / 2;
    let mut top: Vec<f64> = (0..d).map(|_| rng.gen_range(0.02..0.45)).collect();
    top.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut m = vec![0.0; n1];
    for (i, v) in top.iter().enumerate() {
        m[i] = *v;
        m[n1 - 1 - i] = -v;
    }
    m
}
