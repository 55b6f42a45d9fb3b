#![allow(dead_code)]

use ntk_core::data::{generate_dataset, Dataset, NoiseSpec};
use ntk_core::network::{InputPoint, NetworkConfig};
use ntk_core::rng::{stream_rng, unit_ball};
use ntk_core::spectrum::{synthesize_target, SourceTarget, SpectralModel};
use ntk_core::Activation;

pub fn config(width: usize, dim: usize) -> NetworkConfig {
    NetworkConfig::new(width, dim, 0.5, 1.0, Activation::Tanh).unwrap()
}

pub fn ball_points(n: usize, dim: usize, seed: u64) -> Vec<InputPoint> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| InputPoint::new(unit_ball(&mut rng, dim)).unwrap()).collect()
}

/// A small problem on the circle: Fourier surrogate, target and noisy sample.
pub fn circle_problem(atoms: usize, n: usize, r: f64, noise: f64, seed: u64) -> (SpectralModel, SourceTarget, Dataset) {
    let model = SpectralModel::power_law_circle(atoms, 1.5, 0.5).unwrap();
    let target = synthesize_target(&model, r, 1.0, seed).unwrap();
    let spec = if noise > 0.0 { NoiseSpec::Uniform { half_width: noise } } else { NoiseSpec::None };
    let data = generate_dataset(&model, &target, n, spec, None, seed + 1).unwrap();
    (model, target, data)
}
