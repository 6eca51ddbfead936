mod common;

use common::rank;
use proptest::prelude::*;
use tt_toda::algebra::{apply_c, Rank, StructureMatrices};
use tt_toda::asymptotics::{self, extend_antisymmetric};
use tt_toda::cli::{fmt_e12, parse_real, to_json};
use tt_toda::jump_data;
use tt_toda::linalg::{c, determinant, matrix_power, max_abs, max_abs_diff, CMat};
use tt_toda::linear_ode::OdeSystem;
use tt_toda::spectral::{self, ray_support, AsymptoticData, ModelInput, RayIndex, StokesData};

fn generic(r: Rank, half: &[f64]) -> Option<Vec<f64>> {
    let m = extend_antisymmetric(half, r).ok()?;
    spectral::validate_m(r, &m).ok()?;
    let n1 = m.len();
    let wall = (0..n1).map(|i| m[(i + n1 - 1) % n1] - m[i] + 1.0).fold(f64::INFINITY, f64::min);
    (wall > 1e-3).then_some(m)
}

fn m_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..=7).prop_flat_map(|n1| (Just(n1), prop::collection::vec(-0.45f64..0.45, n1 / 2)))
}

fn complex_matrix(n: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n * n)
        .prop_map(move |v| CMat::from_iterator(n, n, v.into_iter().map(|(a, b)| c(a, b))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_matrices_have_finite_order(n1 in 2usize..=9) {
        let st = StructureMatrices::new(rank(n1));
        let id = CMat::identity(n1, n1);
        prop_assert!(max_abs_diff(&matrix_power(&st.pi, n1), &id) < 1e-12);
        let minus = &id * c(-1.0, 0.0);
        prop_assert!(max_abs_diff(&matrix_power(&st.pi_hat, n1), &minus) < 1e-12);
        let sign = if n1 % 2 == 0 { -1.0 } else { 1.0 };
        prop_assert!(max_abs_diff(&matrix_power(st.monodromy_shift(), n1), &(id * c(sign, 0.0))) < 1e-12);
    }

    #[test]
    fn real_form_involution_squares_to_identity(x in (2usize..=6).prop_flat_map(complex_matrix)) {
        let r = rank(x.nrows());
        let back = apply_c(&apply_c(&x, r).unwrap(), r).unwrap();
        prop_assert!(max_abs_diff(&back, &x) < 1e-13);
    }

    #[test]
    fn holomorphic_data_recurrences(n1 in 2usize..=8, raw in prop::collection::vec((0.2f64..3.0, -0.9f64..3.0), 8)) {
        let r = rank(n1);
        let mut cs = vec![0.0; n1];
        let mut ks = vec![0.0; n1];
        for i in 0..n1 {
            let j = if i == 0 { 0 } else { i.min(n1 - i) };
            cs[i] = raw[j].0;
            ks[i] = raw[j].1;
        }
        let input = ModelInput::new(r, cs.clone(), ks.clone()).unwrap();
        let a = spectral::derive_asymptotic(&input).unwrap();
        for i in 0..n1 {
            let im = (i + n1 - 1) % n1;
            let gap = a.m[im] - a.m[i];
            prop_assert!((gap - (-1.0 + n1 as f64 * (ks[i] + 1.0) / a.n_total)).abs() < 1e-12);
            let ratio = a.chat[im] / a.chat[i];
            let want = (n1 as f64 / a.n_total).powf(a.m[i] - a.m[im]) * cs[i] * a.c_prod.powf(-(ks[i] + 1.0) / a.n_total);
            prop_assert!((ratio - want).abs() < 1e-12 * want);
            prop_assert!((a.chat[i] * a.chat[n1 - 1 - i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stokes_round_trip((n1, half) in m_strategy()) {
        let r = rank(n1);
        let Some(m) = generic(r, &half) else { return Ok(()) };
        let data = AsymptoticData::from_m(r, &m, None).unwrap();
        let s = spectral::stokes_params(&data).unwrap();
        let back = spectral::invert_stokes(&s).unwrap();
        for (a, b) in back.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn stokes_factors_are_unipotent_on_their_support(n1 in 2usize..=8, ess in prop::collection::vec(-3.0f64..3.0, 4), p in -20i64..20) {
        let r = rank(n1);
        let s = StokesData::from_essential(r, &ess[..n1 / 2]).unwrap();
        let ray = RayIndex::new(p, r);
        let q = spectral::build_qtilde(ray, &s).unwrap();
        let support = ray_support(ray);
        for i in 0..n1 {
            for j in 0..n1 {
                let v = q[(i, j)];
                prop_assert!(v.im == 0.0);
                if i == j {
                    prop_assert_eq!(v.re, 1.0);
                } else if !support.contains(&(i, j)) {
                    prop_assert_eq!(v.re, 0.0);
                }
            }
        }
        // Q is periodic in k with period 2
        let q2 = spectral::build_qtilde(ray.shifted(2 * n1 as i64), &s).unwrap();
        prop_assert!(max_abs_diff(&q, &q2) == 0.0);
    }

    #[test]
    fn connection_determinant((n1, half) in m_strategy()) {
        let r = rank(n1);
        let Some(m) = generic(r, &half) else { return Ok(()) };
        let data = AsymptoticData::from_m(r, &m, None).unwrap();
        let s = spectral::stokes_params(&data).unwrap();
        let st = StructureMatrices::new(r);
        let want = determinant(&(&st.c_perm * c(1.0 / n1 as f64, 0.0)));
        let e1 = spectral::e1_identity(&s).unwrap();
        prop_assert!((determinant(&e1) - want).norm() < 1e-10 * want.norm().max(1.0));
    }

    #[test]
    fn system_is_trace_free(n1 in 2usize..=6, half in prop::collection::vec(-0.45f64..0.45, 3), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let r = rank(n1);
        let Some(m) = generic(r, &half[..n1 / 2]) else { return Ok(()) };
        prop_assume!(re.hypot(im) > 0.05);
        let sys = OdeSystem::normalized(r, &m).unwrap();
        let a = sys.rhs(c(re, im)).unwrap();
        prop_assert!(a.trace().norm() < 1e-12 * max_abs(&a).max(1.0));
    }

    #[test]
    fn hat_transform_matches_matrix_route(n1 in 2usize..=9, w in prop::collection::vec(-2.0f64..2.0, 4)) {
        let r = rank(n1);
        let full = extend_antisymmetric(&w[..n1 / 2], r).unwrap();
        prop_assert!(asymptotics::hatw_expansion_residual(&full, r).unwrap() < 1e-12);
    }

    #[test]
    fn jumps_keep_unit_diagonal_and_support(n1 in 2usize..=6, ess in prop::collection::vec(-2.0f64..2.0, 3), l in 0.1f64..5.0, x in 0.3f64..4.0) {
        let r = rank(n1);
        let s = StokesData::from_essential(r, &ess[..n1 / 2]).unwrap();
        let spec = jump_data::ContourSpec::new(r, x).unwrap();
        for ray in &spec.infinity_rays {
            let g = jump_data::build_jump(ray.index, l, &s, x).unwrap();
            let support = ray_support(ray.index);
            for i in 0..n1 {
                for j in 0..n1 {
                    if i == j {
                        prop_assert!((g[(i, j)] - c(1.0, 0.0)).norm() < 1e-14);
                    } else if !support.contains(&(i, j)) {
                        prop_assert!(g[(i, j)].norm() == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn z_chain_is_constant((n1, half) in m_strategy()) {
        let r = rank(n1);
        let Some(m) = generic(r, &half) else { return Ok(()) };
        let data = AsymptoticData::from_m(r, &m, None).unwrap();
        let s = spectral::stokes_params(&data).unwrap();
        let e1 = spectral::e1_identity(&s).unwrap();
        let chain = jump_data::z_matrix_chain(&e1, &s).unwrap();
        prop_assert!(jump_data::z_chain_defect(&chain) < 1e-12);
        prop_assert!(jump_data::opposite_sector_residual(&s).unwrap() < 1e-12);
        prop_assert!(jump_data::reality_residual(&s).unwrap() < 1e-12);
    }

    #[test]
    fn float_format_round_trips(v in prop::num::f64::NORMAL) {
        let back: f64 = fmt_e12(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-13 * v.abs());
    }

    #[test]
    fn integer_ratios_parse_with_one_rounding(p in -1000i64..1000, q in 1i64..1000) {
        prop_assert_eq!(parse_real(&format!("{p}/{q}")).unwrap(), p as f64 / q as f64);
    }

    #[test]
    fn json_output_is_deterministic(v in prop::collection::vec(-1e6f64..1e6, 0..20)) {
        prop_assert_eq!(to_json("t", &v).unwrap(), to_json("t", &v.clone()).unwrap());
    }
}
