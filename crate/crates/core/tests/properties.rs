use std::f64::consts::PI;

use proptest::prelude::*;
use zk_core::functionals::{
    phi, phi_prime, phi_third, psi, psi_gamma, psi_gamma_prime, psi_gamma_third, psi_prime, psi_third,
};
use zk_core::invariants::{energy, mass};
use zk_core::linop::random_localized_field;
use zk_core::Grid;

const ROUND: f64 = 1.0 + 1e-14;

proptest! {
    #[test]
    fn psi_is_a_monotone_sigmoid(x in -60.0f64..60.0, h in 1e-3f64..5.0) {
        prop_assert!((psi(x) + psi(-x) - 1.0).abs() < 1e-15);
        prop_assert!(psi(x + h) >= psi(x));
        prop_assert!((0.0..=1.0).contains(&psi(x)));
        prop_assert!((psi_prime(x) * PI * x.cosh() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn third_derivative_bounds(x in -200.0f64..200.0, gamma in 0.05f64..4.0, c in 0.05f64..4.0) {
        prop_assert!(psi_third(x).abs() <= psi_prime(x) * ROUND);
        prop_assert!(psi_gamma_third(x, gamma).abs() <= gamma / 4.0 * psi_gamma_prime(x, gamma) * ROUND);
        prop_assert!(phi_third(x, c).abs() <= c / 16.0 * phi_prime(x, c) * ROUND);
    }

    #[test]
    fn scaled_weights_are_reparametrizations(x in -50.0f64..50.0, gamma in 0.05f64..4.0, c in 0.05f64..4.0) {
        prop_assert_eq!(psi_gamma(x, gamma), psi(0.5 * gamma.sqrt() * x));
        prop_assert_eq!(phi(x, c), psi(0.25 * c.sqrt() * x));
        prop_assert!((psi_gamma_prime(x, 4.0) - psi_prime(x)).abs() < 1e-16);
    }

    #[test]
    fn translation_preserves_invariants(seed in 0u64..200, a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let g = Grid::new(64, 64, 32.0, 32.0).unwrap();
        let u = random_localized_field(&g, seed, 0.0, 0.0, 2.0);
        let v = u.translate(a, b);
        prop_assert!((mass(&v) - mass(&u)).abs() < 1e-12 * mass(&u));
        prop_assert!((v.h1_norm() - u.h1_norm()).abs() < 1e-12 * u.h1_norm());
        prop_assert!((&v.translate(-a, -b) - &u).max_abs() < 1e-12 * u.max_abs());
        let w = u.translate(a, 0.0).translate(0.0, b);
        prop_assert!((&w - &v).max_abs() < 1e-12 * u.max_abs());
    }

    #[test]
    fn reflections_preserve_invariants(seed in 0u64..200) {
        let g = Grid::new(64, 32, 32.0, 16.0).unwrap();
        let u = random_localized_field(&g, seed, 1.0, -2.0, 1.5);
        for v in [u.reflect_x(), u.reflect_y()] {
            prop_assert!((mass(&v) - mass(&u)).abs() < 1e-12 * mass(&u));
            prop_assert!((energy(&v) - energy(&u)).abs() < 1e-12 * energy(&u).abs().max(mass(&u)));
        }
    }
}
