use freeconv::measure::{levy_distance, DiscreteMeasure};
use freeconv::{Measure, C64};
use proptest::prelude::*;

fn measure(max_atoms: usize) -> impl Strategy<Value = Measure> {
    prop::collection::vec((-10.0f64..10.0, 0.05f64..1.0), 1..=max_atoms).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total))).unwrap()
    })
}

fn upper() -> impl Strategy<Value = C64> {
    (-12.0f64..12.0, 1e-4f64..10.0).prop_map(|(re, im)| C64::new(re, im))
}

proptest! {
    #[test]
    fn herglotz(mu in measure(6), z in upper()) {
        prop_assert!(mu.stieltjes(z).im > 0.0);
        prop_assert!(mu.neg_recip(z).im >= z.im * (1.0 - 1e-12));
    }

    #[test]
    fn normalization_at_large_height(mu in measure(6)) {
        let eta = 1e6;
        let z = C64::new(0.0, eta);
        prop_assert!((z * mu.stieltjes(z) + 1.0).norm() < 1e-3);
    }

    #[test]
    fn levy_is_a_metric(a in measure(4), b in measure(4), c in measure(4)) {
        let (ab, ba) = (levy_distance(&a, &b), levy_distance(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert_eq!(levy_distance(&a, &a), 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
        let ac = levy_distance(&a, &c);
        let cb = levy_distance(&c, &b);
        prop_assert!(ab <= ac + cb + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn neg_recip_derivative_matches_central_differences(mu in measure(6), w in upper()) {
        let w = C64::new(w.re, w.im + 0.5);
        let h = 1e-6;
        let dh = C64::new(h, 0.0);
        let fd = (mu.neg_recip(w + dh) - mu.neg_recip(w - dh)) / (2.0 * h);
        let exact = mu.neg_recip_derivative(w);
        prop_assert!((fd - exact).norm() <= 1e-7 * (1.0 + exact.norm()), "fd {fd} exact {exact}");
    }
}
