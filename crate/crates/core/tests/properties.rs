//! Randomized invariants.

mod common;

use ntk_core::bounds::{eta, rate_curve, stopping_time, weight_radius};
use ntk_core::data::excess_risk;
use ntk_core::fit::loglog_fit;
use ntk_core::kernels::{feature_gram, KernelKind};
use ntk_core::network::{forward, init_symmetric, theta_distance, InputPoint, NetworkConfig, Theta};
use ntk_core::spectrum::{effective_dimension, fit_decay_exponent, synthesize_target, SpectralModel};
use ntk_core::tangent::kgd_run;
use ntk_core::Activation;
use proptest::prelude::*;

fn point(dim: usize) -> impl Strategy<Value = InputPoint> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..=1.0).prop_map(|(v, r)| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        InputPoint::new(v.iter().map(|x| x * r / n).collect()).unwrap()
    })
}

fn net_config() -> impl Strategy<Value = NetworkConfig> {
    (1usize..12, 1usize..5, 0.0f64..=1.0, 0.05f64..3.0, prop::bool::ANY).prop_map(|(h, d, g, t, soft)| {
        let act = if soft { Activation::Softplus } else { Activation::Tanh };
        NetworkConfig::new(2 * h, d, g, t, act).unwrap()
    })
}

fn theta_like(width: usize, dim: usize) -> impl Strategy<Value = Theta> {
    prop::collection::vec(-3.0f64..3.0, (dim + 2) * width).prop_map(move |v| Theta::from_flat(width, dim, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_init_is_zero((cfg, seed, xs) in net_config().prop_flat_map(|c| (Just(c), any::<u64>(), prop::collection::vec(point(c.dim), 1..20)))) {
        let t = init_symmetric(&cfg, seed).unwrap();
        for x in &xs {
            prop_assert!(forward(&t, x, &cfg).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn output_is_linear_in_outer_layer((cfg, seed, x) in net_config().prop_flat_map(|c| (Just(c), any::<u64>(), point(c.dim)))) {
        let mut t = init_symmetric(&cfg, seed).unwrap();
        for (k, a) in t.a_mut().iter_mut().enumerate() {
            *a += 0.1 * k as f64;
        }
        let v = forward(&t, &x, &cfg).unwrap();
        let mut t2 = t.clone();
        t2.a_mut().iter_mut().for_each(|a| *a *= 2.0);
        let v2 = forward(&t2, &x, &cfg).unwrap();
        prop_assert!((v2 - 2.0 * v).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn distance_triangle_inequality((a, b, c) in (1usize..6, 1usize..4).prop_flat_map(|(h, d)| (theta_like(2 * h, d), theta_like(2 * h, d), theta_like(2 * h, d)))) {
        let ab = theta_distance(&a, &b).unwrap();
        let bc = theta_distance(&b, &c).unwrap();
        let ac = theta_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(theta_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn effective_dimension_is_monotone(eigs in prop::collection::vec(0.0f64..2.0, 1..50), l1 in 1e-6f64..10.0, l2 in 1e-6f64..10.0) {
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let a = effective_dimension(&eigs, lo).unwrap();
        let b = effective_dimension(&eigs, hi).unwrap();
        prop_assert!(b <= a + 1e-12);
        prop_assert!(a <= eigs.iter().filter(|&&m| m > 0.0).count() as f64 + 1e-12);
    }

    #[test]
    fn decay_fit_is_scale_invariant(c in 0.5f64..3.0, s in 1e-3f64..1e3) {
        let eigs: Vec<f64> = (1..=200).map(|j| (j as f64).powf(-c)).collect();
        let scaled: Vec<f64> = eigs.iter().map(|v| v * s).collect();
        let a = fit_decay_exponent(&eigs, 4, 25).unwrap().b_hat;
        let b = fit_decay_exponent(&scaled, 4, 25).unwrap().b_hat;
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert!((a - 1.0 / c).abs() <= 1e-9);
    }

    #[test]
    fn eta_bounds_partial_sums(vi in 0usize..5, t in 1u64..100_000) {
        let v = [0.0, 0.5, 1.0, 1.5, 2.0][vi];
        let s: f64 = (1..=t).map(|i| (i as f64).powf(-v)).sum();
        prop_assert!(s <= eta(v, t) * (1.0 + 1e-12));
    }

    #[test]
    fn stopping_time_is_monotone(n in 1usize..100_000, dn in 0usize..1000, r in 0.0f64..2.0, b in 0.05f64..1.0) {
        prop_assume!(2.0 * r + b > 1.0);
        prop_assert!(stopping_time(n, r, b).unwrap() <= stopping_time(n + dn, r, b).unwrap());
    }

    #[test]
    fn weight_radius_monotonicity(t in 3usize..500, dt in 0usize..100, n in 1usize..10_000, dn in 0usize..10_000) {
        let effdim = |l: f64| l.powf(-0.7);
        let base = weight_radius(t, n, 0.1, 2.0, effdim).unwrap();
        prop_assert!(weight_radius(t, n + dn, 0.1, 2.0, effdim).unwrap() <= base * (1.0 + 1e-12));
        prop_assert!(weight_radius(t + dt, n, 0.1, 2.0, effdim).unwrap() >= base * (1.0 - 1e-12));
    }

    #[test]
    fn rate_curve_slope(r in 0.0f64..2.0, b in 0.1f64..1.0, c in 0.1f64..10.0) {
        prop_assume!(2.0 * r + b > 1.0 && r > 0.0);
        let grid = [256usize, 512, 1024, 2048, 4096, 8192];
        let curve = rate_curve(&grid, r, b, c).unwrap();
        let xs: Vec<f64> = curve.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = curve.iter().map(|p| p.1).collect();
        let fit = loglog_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope + r / (2.0 * r + b)).abs() <= 1e-12);
    }

    #[test]
    fn excess_risk_triangle(seed in any::<u64>(), f in prop::collection::vec(-1.0f64..1.0, 32), g in prop::collection::vec(-1.0f64..1.0, 32)) {
        let m = SpectralModel::power_law_circle(32, 1.0, 0.5).unwrap();
        let t = synthesize_target(&m, 0.5, 1.0, seed).unwrap();
        let tf = excess_risk(&f, &t, &m).unwrap();
        let tg = excess_risk(&g, &t, &m).unwrap();
        let fg = m.weighted_norm(&f.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>()).unwrap();
        prop_assert!(tf <= tg + fg + 1e-12);
    }

    #[test]
    fn kgd_residual_is_nonincreasing(feats in prop::collection::vec(-0.5f64..0.5, 10 * 6), y in prop::collection::vec(-1.0f64..1.0, 10)) {
        let k = feature_gram(10, 6, &feats, KernelKind::Custom, 1.5).unwrap();
        let alpha = 0.99 / k.kappa_sq;
        let tr = kgd_run(&k, &y, alpha, 60).unwrap();
        for t in 1..=60 {
            prop_assert!(tr.risk(t) <= tr.risk(t - 1) * (1.0 + 1e-12) + 1e-300);
        }
    }
}
