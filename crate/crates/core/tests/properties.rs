use jjaqed::circuit::{build_reduced_system, derive_atom_elements, CircuitParams};
use jjaqed::dynamics::ModalModel;
use jjaqed::perturbative::{z_eff, z_infinity};
use jjaqed::special::trigamma;
use jjaqed::spectral::solve_quadratic_modes;
use jjaqed::tracker::track_atomic_mode;
use jjaqed::units::{angular, hertz, E_CHARGE, HBAR};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn params(n: usize, log_chi: f64, fa_ghz: f64) -> CircuitParams {
    CircuitParams::reference().with_n(n).with_chi(10f64.powf(log_chi)).with_omega_a(angular(fa_ghz * 1e9))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn impedances_are_passive(n in 1usize..400, log_chi in -6.0f64..0.0, f_ghz in 0.2f64..20.0) {
        let p = params(n, log_chi, 5.0);
        let w = angular(f_ghz * 1e9);
        prop_assert!(z_eff(&p, w).unwrap().re >= -1e-12);
        prop_assert!(z_infinity(&p, w).unwrap().inv().re >= 0.0);
    }

    #[test]
    fn poles_are_stable_and_paired(n in 1usize..40, log_chi in -5.0f64..0.0, fa in 3.0f64..12.0) {
        let p = params(n, log_chi, fa);
        let sys = build_reduced_system(&p).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        prop_assert_eq!(ms.len(), 2 * sys.m);
        let scale = ms.poles.iter().map(|s| s.norm()).fold(0.0, f64::max);
        for s in &ms.poles {
            prop_assert!(s.re <= 1e-12 * scale, "unstable pole {}", s);
            let partner = ms.poles.iter().map(|t| (t - s.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(partner <= 1e-8 * scale, "no conjugate for {}", s);
        }
    }

    #[test]
    fn residues_sum_to_zero(n in 1usize..25, log_chi in -4.0f64..0.0) {
        let sys = build_reduced_system(&params(n, log_chi, 6.0)).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        for i in 0..sys.m {
            for j in 0..sys.m {
                let total: C64 = ms.active().iter().map(|&q| ms.residue_entry(q, i, j)).sum();
                prop_assert!(total.norm() < 1e-8, "sum R[{},{}] = {}", i, j, total);
            }
        }
    }

    #[test]
    fn occupation_is_real_and_nonnegative(n in 1usize..15, log_chi in -3.0f64..0.0, t_mk in 0.0f64..100.0) {
        let m = ModalModel::new(&params(n, log_chi, 6.0)).unwrap();
        let grid: Vec<f64> = (0..60).map(|i| i as f64 * 2.5).collect();
        let tr = m.occupation(&grid, t_mk * 1e-3).unwrap();
        prop_assert!(tr.max_imag < 1e-8);
        for &v in &tr.n_a {
            prop_assert!(v.is_finite() && v >= -1e-9, "n_A = {}", v);
        }
        prop_assert!((tr.n_a[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn atom_elements_reproduce_inputs(ec_ghz in 0.05f64..50.0, fa_ghz in 0.5f64..50.0) {
        let ec = HBAR * angular(ec_ghz * 1e9);
        let w = angular(fa_ghz * 1e9);
        let (c, l) = derive_atom_elements(ec, w).unwrap();
        prop_assert!((E_CHARGE * E_CHARGE / (2.0 * c) / ec - 1.0).abs() < 1e-13);
        prop_assert!((1.0 / (l * c).sqrt() / w - 1.0).abs() < 1e-13);
    }

    #[test]
    fn trigamma_recurrence(re in 0.05f64..30.0, im in -30.0f64..30.0) {
        let z = C64::new(re, im);
        let lhs = trigamma(z + 1.0);
        let rhs = trigamma(z) - (z * z).inv();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }
}

#[test]
fn tracking_without_coupling_returns_bare_atom() {
    let p = params(50, 0.0, 8.0);
    let tr = track_atomic_mode(&p, 0.0, 4).unwrap();
    assert_eq!(tr.chi_grid, vec![0.0]);
    assert!((hertz(tr.frequencies[0].re) / 8e9 - 1.0).abs() < 1e-14);
    assert_eq!(tr.frequencies[0].im, 0.0);
    assert!((tr.ipr - 1.0).abs() < 1e-14);
}

#[test]
fn trigamma_at_one_is_zeta_two() {
    let v = trigamma(C64::new(1.0, 0.0));
    assert!((v.re - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
    assert_eq!(v.im, 0.0);
}
