use airyguide::special_functions::{airy, airy_eval, integrate, QuadratureRule};
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wronskian_holds(x in -12.0f64..8.0) {
        let v = airy_eval(x).unwrap();
        prop_assert!((v.wronskian() - 1.0 / PI).abs() <= 1e-10, "x = {x}: {}", v.wronskian() - 1.0 / PI);
    }
}

proptest! {
    #[test]
    fn second_derivative_matches_difference_quotient(x in -10.0f64..5.0) {
        let h = 1e-5;
        let fd = (airy(x + h).ai_prime - airy(x - h).ai_prime) / (2.0 * h);
        let exact = x * airy(x).ai;
        let scale = exact.abs().max(airy(x).ai_prime.abs()).max(1e-3);
        prop_assert!((fd - exact).abs() / scale < 1e-6);
        let fdb = (airy(x + h).bi_prime - airy(x - h).bi_prime) / (2.0 * h);
        let exactb = x * airy(x).bi;
        let scaleb = exactb.abs().max(airy(x).bi_prime.abs()).max(1e-3);
        prop_assert!((fdb - exactb).abs() / scaleb < 1e-6);
    }

    #[test]
    fn ai_positive_and_decreasing(x in 0.0f64..60.0, dx in 1e-3f64..1.0) {
        let a = airy(x).ai;
        prop_assert!(a > 0.0);
        prop_assert!(airy(x + dx).ai < a);
    }

    #[test]
    fn gauss_is_exact_on_cubics(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0,
                                c3 in -5.0f64..5.0, a in -3.0f64..3.0, w in 0.01f64..4.0) {
        let b = a + w;
        let p = |x: f64| c0 + c1 * x + c2 * x * x + c3 * x * x * x;
        let prim = |x: f64| c0 * x + c1 * x * x / 2.0 + c2 * x.powi(3) / 3.0 + c3 * x.powi(4) / 4.0;
        let exact = prim(b) - prim(a);
        for order in 2..6 {
            let v = integrate(p, a, b, &QuadratureRule::gauss(order, 1)).unwrap();
            let scale = exact.abs().max(c0.abs() + c1.abs() + c2.abs() + c3.abs());
            prop_assert!((v - exact).abs() <= 1e-12 * scale * w.max(1.0).powi(4));
        }
    }
}
