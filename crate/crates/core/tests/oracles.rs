//! Values checked against independent computations: hand expansions,
//! matrix-power closed forms, partial sums and golden numbers.

mod common;

use common::{ball_points, config};
use ntk_core::bounds::{eta, neuron_threshold, stopping_time, weight_radius};
use ntk_core::data::{generate_dataset, NoiseSpec};
use ntk_core::kernels::{feature_gram, gram_empirical, KernelKind, LimitKernel, Quadrature};
use ntk_core::network::{grad, init_symmetric, lipschitz_constant, taylor_remainder, InputPoint, Theta};
use ntk_core::rng::{stream_rng, unit_sphere};
use ntk_core::spectrum::{
    effective_dimension, fit_decay_exponent, fit_effdim_exponent, mercer_nystrom, synthesize_target, Measure,
    SpectralModel,
};
use ntk_core::tangent::tangent_features;
use ntk_core::{Activation, NetworkConfig, ParamBlocks};
use rand::Rng;

#[test]
fn neuron_threshold_golden_value() {
    let v = neuron_threshold(4096, 1.0, 1.0, 2, 0.1, 1.0).unwrap();
    approx::assert_relative_eq!(v, 657_851.196_179_478_1, max_relative = 1e-12);
}

#[test]
fn weight_radius_golden_value() {
    let v = weight_radius(16, 256, 0.1, 2.0, |_| 4.0).unwrap();
    approx::assert_relative_eq!(v, 50_574.007_081_774_31, max_relative = 1e-12);
}

#[test]
fn eta_dominates_partial_sums() {
    let mut s = 0.0;
    for i in 1..=1_000_000u64 {
        s += 1.0 / (i as f64 * i as f64);
    }
    assert!((s - 1.644_9).abs() < 1e-4);
    assert!(s <= eta(2.0, 1_000_000));
    assert!((eta(1.0, 7) - (1.0 + (7.0f64).ln())).abs() < 1e-15);
    approx::assert_relative_eq!(eta(1.0, 1) + 2.0, 3.0);
}

#[test]
fn stopping_time_examples() {
    assert_eq!(stopping_time(256, 0.5, 1.0).unwrap(), 16);
    assert_eq!(stopping_time(4096, 1.0, 1.0).unwrap(), 16);
    let mut prev = 0;
    for n in 1..3000 {
        let t = stopping_time(n, 0.75, 0.6).unwrap();
        assert!(t >= prev);
        prev = t;
    }
}

#[test]
fn empirical_gram_is_feature_gram() {
    let cfg = config(24, 2);
    let t0 = init_symmetric(&cfg, 8).unwrap();
    let pts = ball_points(30, 2, 3);
    let k = gram_empirical(&pts, &t0, &cfg).unwrap();
    let f = tangent_features(&t0, &cfg, &pts, ParamBlocks::All).unwrap();
    let g = feature_gram(30, cfg.param_len(), &f, KernelKind::Custom, cfg.kappa_sq()).unwrap();
    for (a, b) in k.entries().iter().zip(g.entries()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(k.min_eigenvalue().unwrap() >= -1e-10 * k.trace());
    assert!(k.max_abs_entry() <= cfg.kappa_sq());
}

#[test]
fn gram_permutation_consistency() {
    let cfg = config(8, 3);
    let t0 = init_symmetric(&cfg, 1).unwrap();
    let pts = ball_points(7, 3, 2);
    let perm = [3usize, 0, 6, 1, 5, 2, 4];
    let shuffled: Vec<InputPoint> = perm.iter().map(|&i| pts[i].clone()).collect();
    let a = gram_empirical(&pts, &t0, &cfg).unwrap().permuted(&perm).unwrap();
    let b = gram_empirical(&shuffled, &t0, &cfg).unwrap();
    assert_eq!(a.entries(), b.entries());
}

#[test]
fn kernel_bound_holds_for_random_pairs() {
    for act in [Activation::Tanh, Activation::Softplus] {
        let cfg = NetworkConfig::new(16, 3, 1.0, 1.3, act).unwrap();
        let t0 = init_symmetric(&cfg, 5).unwrap();
        let lim = LimitKernel::new(&cfg, Quadrature::MonteCarlo { samples: 2000, seed: 3 }).unwrap();
        let pts = ball_points(2000, 3, 7);
        for pair in pts.chunks(2) {
            let e = ntk_core::kernels::ntk_empirical(&pair[0], &pair[1], &t0, &cfg).unwrap();
            assert!(e <= cfg.kappa_sq());
            assert!(lim.eval(&pair[0], &pair[1]) <= cfg.kappa_sq());
        }
    }
}

#[test]
fn independent_monte_carlo_estimates_agree() {
    let cfg = NetworkConfig::new(2, 3, 0.5, 1.0, Activation::Tanh).unwrap();
    let pts = ball_points(2, 3, 11);
    let a = LimitKernel::new(&cfg, Quadrature::MonteCarlo { samples: 1_000_000, seed: 1 }).unwrap();
    let b = LimitKernel::new(&cfg, Quadrature::MonteCarlo { samples: 1_000_000, seed: 2 }).unwrap();
    let (va, sa) = a.eval_with_stderr(&pts[0], &pts[1]);
    let (vb, sb) = b.eval_with_stderr(&pts[0], &pts[1]);
    assert!((va - vb).abs() <= 3.0 * (sa * sa + sb * sb).sqrt());
    let g = LimitKernel::new(&cfg, Quadrature::SphereGrid { samples: 20_000 }).unwrap();
    assert!((g.eval(&pts[0], &pts[1]) - va).abs() <= 4.0 * sa);
}

#[test]
fn linear_kernel_spectrum() {
    let exact = mercer_nystrom(|x, y| x.dot(y), 200, Measure::CircleGrid, 2, 0, KernelKind::Custom, 1.0).unwrap();
    assert_eq!(exact.positive_count(), 2);
    assert!((exact.eigenvalues[0] - 0.5).abs() < 1e-12 && (exact.eigenvalues[1] - 0.5).abs() < 1e-12);
    let mc = mercer_nystrom(|x, y| x.dot(y), 400, Measure::UniformSphere, 3, 4, KernelKind::Custom, 1.0).unwrap();
    assert_eq!(mc.positive_count(), 3);
    for mu in &mc.eigenvalues[..3] {
        assert!((mu - 1.0 / 3.0).abs() < 0.05);
    }
    let tr: f64 = mc.atoms.iter().zip(&mc.weights).map(|(x, w)| w * x.dot(x)).sum();
    assert!((mc.eigenvalues.iter().sum::<f64>() - tr).abs() < 1e-10);
}

#[test]
fn nystrom_grid_refinement() {
    let cfg = config(2, 2);
    let lim = LimitKernel::new(&cfg, Quadrature::SphereGrid { samples: 1024 }).unwrap();
    let build = |n| mercer_nystrom(|x, y| lim.eval(x, y), n, Measure::CircleGrid, 2, 21, KernelKind::Custom, 4.0).unwrap();
    let (a, b) = (build(200), build(400));
    for j in 0..10 {
        let rel = (a.eigenvalues[j] - b.eigenvalues[j]).abs() / b.eigenvalues[j];
        assert!(rel <= 0.02, "eigenvalue {j}: {rel}");
    }
}

#[test]
fn synthetic_effective_dimension_exponents() {
    for c in [1.5, 2.0] {
        let eigs: Vec<f64> = (1..=10_000).map(|j| (j as f64).powf(-c)).collect();
        let f = fit_effdim_exponent(&eigs, 10, 1000).unwrap();
        assert!((f.b_hat - 1.0 / c).abs() <= 0.05, "c = {c}: {}", f.b_hat);
        let d = fit_decay_exponent(&eigs, 4, 1250).unwrap();
        assert!((d.b_hat - f.b_hat).abs() <= 0.1);
    }
    assert_eq!(effective_dimension(&[1.0], 1.0).unwrap(), 0.5);
}

#[test]
fn source_target_rkhs_boundary() {
    let m = SpectralModel::power_law_circle(256, 2.0, 0.5).unwrap();
    let t = synthesize_target(&m, 0.5, 1.7, 3).unwrap();
    assert!((t.rkhs_norm_sq(&m) - 1.7 * 1.7).abs() < 1e-9);
    let back = m.synthesize(&t.g_coeffs(&m)).unwrap();
    for (x, y) in back.iter().zip(&t.g_values) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn uniform_noise_has_zero_mean() {
    let (m, t, _) = common::circle_problem(64, 1, 0.5, 0.0, 1);
    let s = 0.1;
    let n = 100_000;
    let d = generate_dataset(&m, &t, n, NoiseSpec::Uniform { half_width: s }, None, 77).unwrap();
    let mean: f64 = d.atom_indices.iter().zip(&d.labels).map(|(a, y)| y - t.g_values[*a]).sum::<f64>() / n as f64;
    assert!(mean.abs() <= 3.0 * s / (12.0 * n as f64).sqrt(), "{mean}");
}

fn random_perturbation(rng: &mut impl Rng, theta0: &Theta, radius: f64) -> Theta {
    let dir = unit_sphere(rng, theta0.as_slice().len());
    let rho = radius * rng.gen::<f64>();
    let data = theta0.as_slice().iter().zip(&dir).map(|(t, d)| t + rho * d).collect();
    Theta::from_flat(theta0.width(), theta0.dim(), data).unwrap()
}

#[test]
fn remainder_and_gradient_lipschitz_bounds() {
    for act in [Activation::Tanh, Activation::Softplus] {
        for width in [4, 16, 64] {
            let cfg = NetworkConfig::new(width, 2, 0.7, 1.0, act).unwrap();
            let t0 = init_symmetric(&cfg, 2).unwrap();
            let radius = 3.0;
            let lip = lipschitz_constant(&cfg, radius) / (width as f64).sqrt();
            let mut rng = stream_rng(10 + width as u64, 0);
            let xs = ball_points(1000, 2, 6);
            for x in &xs {
                let t = random_perturbation(&mut rng, &t0, radius);
                let dist2 = t.sub(&t0).unwrap().norm_sq();
                let rem = taylor_remainder(&t, &t0, x, &cfg).unwrap();
                assert!(rem.abs() <= lip * dist2 * 1.1);
                let u = random_perturbation(&mut rng, &t0, radius);
                let gd = grad(&t, x, &cfg).unwrap().sub(&grad(&u, x, &cfg).unwrap()).unwrap().norm();
                assert!(gd <= lip * t.sub(&u).unwrap().norm() * 1.1);
            }
        }
    }
}
