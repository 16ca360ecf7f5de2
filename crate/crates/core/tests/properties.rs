use biasbench_core::crossu::cross_u;
use biasbench_core::dataset::FeatureSubset;
use biasbench_core::kernels::{cross_gram, eval_kernel, KernelFamily, KernelSpec};
use biasbench_core::nuisance::ToleranceBounds;
use biasbench_core::signal::{signal_values, SignalParts};
use proptest::prelude::*;

fn rows(m: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), m)
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (prop_oneof![Just(KernelFamily::Laplacian), Just(KernelFamily::Gaussian)], 0.2..5.0f64)
        .prop_map(|(family, scale)| KernelSpec::new(family, scale).unwrap())
}

/// Two folds of size `m` with matching signals.
fn folds() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (2usize..24, 1usize..5).prop_flat_map(|(m, d)| {
        (
            rows(m, d),
            rows(m, d),
            prop::collection::vec(-10.0..10.0f64, m),
            prop::collection::vec(-10.0..10.0f64, m),
        )
    })
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(
        (u, v) in (1usize..6).prop_flat_map(|d| (prop::collection::vec(-4.0..4.0f64, d), prop::collection::vec(-4.0..4.0f64, d))),
        spec in kernel(),
    ) {
        let kuv = eval_kernel(&spec, &u, &v).unwrap();
        let kvu = eval_kernel(&spec, &v, &u).unwrap();
        prop_assert_eq!(kuv, kvu);
        prop_assert!((0.0..=1.0).contains(&kuv));
        prop_assert_eq!(eval_kernel(&spec, &u, &u).unwrap(), 1.0);
    }

    #[test]
    fn swapping_folds_keeps_the_mean((x1, x2, p1, p2) in folds(), spec in kernel()) {
        let d = x1[0].len();
        let forward = cross_gram(&x1, &x2, &FeatureSubset::all(d), &spec).unwrap();
        let backward = cross_gram(&x2, &x1, &FeatureSubset::all(d), &spec).unwrap();
        let a = cross_u(&p1, &p2, &forward).unwrap();
        let b = cross_u(&p2, &p1, &backward).unwrap();
        prop_assert!((a.hhat2 - b.hhat2).abs() <= 1e-10 * (1.0 + a.hhat2.abs()));
        let mean = a.h_values.iter().sum::<f64>() / a.m as f64;
        prop_assert!((mean - a.hhat2).abs() <= 1e-10 * (1.0 + mean.abs()));
    }

    #[test]
    fn statistic_is_scale_free((x1, x2, p1, p2) in folds(), spec in kernel(), c in 0.01..100.0f64) {
        let d = x1[0].len();
        let gram = cross_gram(&x1, &x2, &FeatureSubset::all(d), &spec).unwrap();
        let base = cross_u(&p1, &p2, &gram).unwrap();
        prop_assume!(base.sigma_hat > 1e-8 * base.h_values.iter().map(|h| h.abs()).fold(0.0, f64::max));
        let scaled: (Vec<f64>, Vec<f64>) = (p1.iter().map(|v| c * v).collect(), p2.iter().map(|v| c * v).collect());
        let other = cross_u(&scaled.0, &scaled.1, &gram).unwrap();
        prop_assert!((base.studentized - other.studentized).abs() <= 1e-8 * (1.0 + base.studentized.abs()));
    }

    #[test]
    fn signal_stays_inside_the_band(
        (pseudo, tau, g) in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-50.0..50.0f64, n),
            prop::collection::vec(-20.0..20.0f64, n),
            prop::collection::vec(0.0..=1.0f64, n),
        )),
        delta in 0.0..30.0f64,
    ) {
        let bounds = ToleranceBounds::around(&tau, delta).unwrap();
        for (l, u) in bounds.lower.iter().zip(&bounds.upper) {
            prop_assert!((u - l - 2.0 * delta).abs() <= 1e-12 * (1.0 + delta));
        }
        let parts = SignalParts::new(pseudo.clone(), &bounds).unwrap();
        let psi = signal_values(&parts, &g).unwrap();
        for i in 0..psi.len() {
            let lo = pseudo[i] - bounds.upper[i];
            let hi = pseudo[i] - bounds.lower[i];
            prop_assert!(psi[i] >= lo - 1e-9 && psi[i] <= hi + 1e-9);
        }
        if delta == 0.0 {
            for i in 0..psi.len() {
                prop_assert_eq!(psi[i], pseudo[i] - tau[i]);
            }
        }
    }
}
