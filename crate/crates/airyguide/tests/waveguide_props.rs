use airyguide::waveguide_model::*;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn builtin() -> impl Strategy<Value = BuiltinId> {
    prop::sample::select(BuiltinId::ALL.to_vec())
}

fn near_notch(id: BuiltinId, x: f64) -> bool {
    id == BuiltinId::H4 && x < -4.0 + 1e-3
}

#[test]
fn builtin_profiles_respect_bounds_and_slope() {
    for id in BuiltinId::ALL {
        let p = Profile::builtin(id);
        let xs = uniform_grid(-8.0, 8.0, 10_000);
        for &x in &xs {
            let h = p.h(x);
            assert!(h >= p.h_min - 1e-15 && h <= p.h_max + 1e-15, "{} h({x}) = {h}", id.name());
            if !near_notch(id, x) {
                assert!(p.h_prime(x).abs() <= p.eta, "{} h'({x}) = {}", id.name(), p.h_prime(x));
            }
        }
        // Lipschitz continuity between neighboring samples
        for w in xs.windows(2) {
            if near_notch(id, w[0]) || near_notch(id, w[1]) {
                continue;
            }
            let jump = (p.h(w[1]) - p.h(w[0])).abs();
            assert!(jump <= p.eta * (w[1] - w[0]) * (1.0 + 1e-9), "{} jumps {jump:e} at {}", id.name(), w[0]);
        }
        // constant outside the support
        let (a, b) = p.support;
        assert_eq!(p.h(a - 0.5), p.h(a - 3.0));
        assert_eq!(p.h(b + 0.5), p.h(b + 3.0));
    }
}

#[test]
fn notch_profile_is_continuous_but_steep_at_left_end() {
    let p = Profile::builtin(BuiltinId::H4);
    // square-root onset: a jump of order sqrt(1e-12)
    assert!((p.h(-4.0 - 1e-12) - p.h(-4.0 + 1e-12)).abs() < 1e-8);
    assert!(p.h_prime(-4.0 + 1e-8) > p.eta);
}

fn sign_changes(p: &Profile, target: f64, m: usize) -> Vec<f64> {
    let (a, b) = p.support;
    let xs = uniform_grid(a, b, m);
    let mut roots = Vec::new();
    for w in xs.windows(2) {
        let (u, v) = (p.h(w[0]) - target, p.h(w[1]) - target);
        if (u > 0.0) != (v > 0.0) {
            roots.push(0.5 * (w[0] + w[1]));
        }
    }
    roots
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resonant_points_match_brute_force(id in builtin(), frac in 0.02f64..0.98, n in 1usize..3) {
        let p = Arc::new(Profile::builtin(id));
        let target = p.h_min + frac * (p.h_max - p.h_min);
        let k = n as f64 * PI / target;
        let brute = sign_changes(&p, target, 100_000);
        // roots closer than the classification grid cannot be separated
        prop_assume!(brute.windows(2).all(|w| w[1] - w[0] > 0.01));
        let ctx = classify_mode(n, k, &p).unwrap();
        prop_assert_eq!(ctx.resonant_points.len(), brute.len());
        for (rp, b) in ctx.resonant_points.iter().zip(&brute) {
            prop_assert!((rp.x - b).abs() < 1e-3, "{} vs {}", rp.x, b);
            prop_assert!((p.h(rp.x) - target).abs() < 1e-12);
        }
        if brute.is_empty() {
            prop_assert_eq!(ctx.classification, Classification::Evanescent);
        } else {
            prop_assert_eq!(ctx.classification, Classification::LocallyResonant);
        }
    }

    #[test]
    fn local_wavenumber_branch(id in builtin(), x in -8.0f64..8.0, k in 5.0f64..70.0, n in 0usize..4) {
        let p = Profile::builtin(id);
        let kn = local_wavenumber(n, k, &p, x);
        let propagating = k >= n as f64 * PI / p.h(x);
        prop_assert!(kn.re == 0.0 || kn.im == 0.0);
        prop_assert!(kn.re >= 0.0 && kn.im >= 0.0);
        prop_assert_eq!(kn.im == 0.0, propagating);
        let sq = wavenumber_squared(n, k, p.h(x));
        prop_assert!(((kn * kn).re - sq).abs() <= 1e-9 * (1.0 + sq.abs()));
    }

    #[test]
    fn classification_follows_the_width_range(id in builtin(), k in 20.0f64..45.0) {
        let p = Arc::new(Profile::builtin(id));
        let (lo, hi) = (PI / p.h_max, PI / p.h_min);
        prop_assume!((k - lo).abs() > 1e-6 && (k - hi).abs() > 1e-6);
        let ctx = classify_mode(1, k, &p).unwrap();
        let expected = if k > hi {
            Classification::Propagative
        } else if k < lo {
            Classification::Evanescent
        } else {
            Classification::LocallyResonant
        };
        prop_assert_eq!(ctx.classification, expected);
    }
}

#[test]
fn delta_margin_positive_on_builtin_frequency_sets() {
    for id in BuiltinId::ALL {
        let p = Arc::new(Profile::builtin(id));
        for &k in &airyguide::inversion_pipeline::builtin_frequencies(id) {
            let d = delta_margin(k, &p, default_delta_modes(k, &p).max(1));
            assert!(d > 0.0, "{} k = {k}: delta {d}", id.name());
            assert!(classify_mode(1, k, &p).is_ok());
        }
    }
}

#[test]
fn forbidden_frequency_is_rejected_with_margin() {
    let p = Arc::new(Profile::builtin(BuiltinId::H3));
    let k = PI / p.h_max;
    match classify_mode(1, k, &p) {
        Err(airyguide::Error::ForbiddenFrequency { delta, .. }) => assert!(delta < 1e-3),
        other => panic!("expected a forbidden frequency, got {other:?}"),
    }
}
