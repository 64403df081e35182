use airyguide::forward_solver::*;
use airyguide::waveguide_model::*;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn profile(id: BuiltinId) -> Arc<Profile> {
    Arc::new(Profile::builtin(id))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn xi_is_monotone_and_vanishes_at_the_resonant_point(
        id in prop::sample::select(vec![BuiltinId::H2, BuiltinId::H3]),
        frac in 0.1f64..0.9,
    ) {
        let p = profile(id);
        let k = PI / (p.h_min + frac * (p.h_max - p.h_min));
        let ctx = classify_mode(1, k, &p).unwrap().designate_nearest(0.0);
        let tp = ctx.turning_point().unwrap();
        prop_assert!(xi_map(&ctx, tp.x).unwrap().abs() < 1e-9);
        let xs = uniform_grid(tp.x - 2.0, tp.x + 2.0, 161);
        let xi = xi_many(&ctx, &xs).unwrap();
        // decreasing where h increases through x*
        prop_assert!(xi.windows(2).all(|w| (w[1] - w[0]) * tp.orientation < 0.0));
        for (&x, &v) in xs.iter().zip(&xi) {
            if (x - tp.x).abs() > 1e-9 {
                prop_assert!(v * (x - tp.x) * tp.orientation < 0.0);
            }
        }
    }

    #[test]
    fn resonant_kernel_is_continuous_at_the_source(s in -3.5f64..3.5, frac in 0.2f64..0.8) {
        let p = profile(BuiltinId::H3);
        let k = PI / (p.h_min + frac * (p.h_max - p.h_min));
        let ctx = classify_mode(1, k, &p).unwrap();
        let l = green_kernel(&ctx, s - 1e-10, s).unwrap();
        let r = green_kernel(&ctx, s + 1e-10, s).unwrap();
        prop_assert!((l - r).norm() < 1e-9, "{l} vs {r}");
    }

    #[test]
    fn evanescent_kernel_decays_away_from_the_source(s in -3.0f64..3.0, k in 20.0f64..30.0) {
        let p = profile(BuiltinId::H3);
        let ctx = classify_mode(1, k, &p).unwrap();
        prop_assert_eq!(ctx.classification, Classification::Evanescent);
        let right = kernel_row(&ctx, s, &uniform_grid(s, s + 2.0, 40)).unwrap();
        prop_assert!(right.windows(2).all(|w| w[1].norm() < w[0].norm()));
        let left = kernel_row(&ctx, s, &uniform_grid(s - 2.0, s, 40)).unwrap();
        prop_assert!(left.windows(2).all(|w| w[1].norm() > w[0].norm()));
    }

    #[test]
    fn kernel_is_reciprocal(x in -3.0f64..3.0, s in -3.0f64..3.0, k in 32.0f64..40.0) {
        let p = profile(BuiltinId::H3);
        let ctx = classify_mode(1, k, &p).unwrap();
        prop_assume!(ctx.classification == Classification::Propagative);
        let a = green_kernel(&ctx, x, s).unwrap();
        let b = green_kernel(&ctx, s, x).unwrap();
        prop_assert!((a - b).norm() <= 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn noise_is_deterministic_and_scaled(seed in 0u64..1000, amp in 0.01f64..0.5) {
        let xs = uniform_grid(-1.0, 1.0, 64);
        let vals = vec![num_complex::Complex64::new(1.0, -1.0); 64];
        let tr = SurfaceTrace::new(xs, vals, 31.0).unwrap();
        let a = add_noise(&tr, amp, seed).unwrap();
        let b = add_noise(&tr, amp, seed).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        let dev: Vec<_> = a.values.iter().zip(&tr.values).map(|(u, v)| u - v).collect();
        prop_assert!(l2_norm(&dev) > 0.0);
    }
}
