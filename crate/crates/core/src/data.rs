//! Synthetic regression samples drawn from a spectral surrogate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::InputPoint;
use crate::rng::stream_rng;
use crate::spectrum::{SourceTarget, SpectralModel};
use crate::trainer::Batch;

/// Label noise added to `g_ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
}

impl NoiseSpec {
    pub fn half_width(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { half_width } => half_width,
        }
    }
}

/// Sample `(x_i, y_i)` with inputs at atoms of a spectral model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub atom_indices: Vec<usize>,
    pub points: Vec<InputPoint>,
    pub labels: Vec<f64>,
    pub noise: NoiseSpec,
    /// Label bound, `|y_i| ≤ C_Y`.
    pub c_y: f64,
    pub seed: u64,
}

/// Draws `n` atoms i.i.d. by weight and labels `y_i = g_ρ(x_i) + ε_i`.
/// Without an explicit `c_y` the bound is `max|g_ρ| + s`; an explicit bound
/// below that is rejected.
pub fn generate_dataset(
    model: &SpectralModel,
    target: &SourceTarget,
    n: usize,
    noise: NoiseSpec,
    c_y: Option<f64>,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("data.n", "sample size must be positive"));
    }
    if target.g_values.len() != model.len() {
        return Err(Error::shape("target values and model atoms differ in number"));
    }
    let s = noise.half_width();
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::config("data.noise", "noise half-width must be nonnegative"));
    }
    let required = target.max_abs() + s;
    let c_y = match c_y {
        None => required,
        Some(c) if c >= required => c,
        Some(c) => {
            return Err(Error::config(
                "data.c_y",
                format!("C_Y = {c} is below max|g| + s = {required}; set C_Y >= {required}"),
            ))
        }
    };
    let index = WeightedIndex::new(&model.weights).map_err(|e| Error::config("spectrum.weights", format!("{e}")))?;
    let mut atom_rng = stream_rng(seed, 0);
    let mut noise_rng = stream_rng(seed, 1);
    let mut atom_indices = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = index.sample(&mut atom_rng);
        let eps = match noise {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { half_width } => half_width * (2.0 * noise_rng.gen::<f64>() - 1.0),
        };
        atom_indices.push(a);
        points.push(model.atoms[a].clone());
        labels.push(target.g_values[a] + eps);
    }
    Ok(Dataset {
        atom_indices,
        points,
        labels,
        noise,
        c_y,
        seed,
    })
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// One batch entry per sample.
    pub fn batch(&self) -> Result<Batch> {
        Batch::from_samples(self.points.clone(), &self.labels)
    }

    /// Per-atom counts, label sums and squared-label sums over all `atoms` atoms.
    pub fn atom_totals(&self, atoms: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut counts = vec![0; atoms];
        let mut sums = vec![0.0; atoms];
        let mut sq = vec![0.0; atoms];
        for (&a, &y) in self.atom_indices.iter().zip(&self.labels) {
            counts[a] += 1;
            sums[a] += y;
            sq[a] += y * y;
        }
        (counts, sums, sq)
    }

    /// Batch over the distinct atoms that occur in the sample, with the atom
    /// index of each entry.
    pub fn grouped_batch(&self, model: &SpectralModel) -> Result<(Batch, Vec<usize>)> {
        let (counts, sums, sq) = self.atom_totals(model.len());
        let used: Vec<usize> = (0..model.len()).filter(|&a| counts[a] > 0).collect();
        let batch = Batch::grouped(
            used.iter().map(|&a| model.atoms[a].clone()).collect(),
            used.iter().map(|&a| counts[a]).collect(),
            used.iter().map(|&a| sums[a]).collect(),
            used.iter().map(|&a| sq[a]).collect(),
        )?;
        Ok((batch, used))
    }
}

/// `‖f - g_ρ‖_{L²(w)}` for `f` given at the atoms.
pub fn excess_risk(predictor: &[f64], target: &SourceTarget, model: &SpectralModel) -> Result<f64> {
    if predictor.len() != model.len() || target.g_values.len() != model.len() {
        return Err(Error::shape("predictor must be evaluated at every atom"));
    }
    let diff: Vec<f64> = predictor.iter().zip(&target.g_values).map(|(f, g)| f - g).collect();
    model.weighted_norm(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::synthesize_target;

    fn setup() -> (SpectralModel, SourceTarget) {
        let m = SpectralModel::power_law_circle(64, 1.5, 0.5).unwrap();
        let t = synthesize_target(&m, 0.5, 1.0, 2).unwrap();
        (m, t)
    }

    #[test]
    fn noiseless_labels_equal_target() {
        let (m, t) = setup();
        let d = generate_dataset(&m, &t, 50, NoiseSpec::None, None, 1).unwrap();
        for (a, y) in d.atom_indices.iter().zip(&d.labels) {
            assert_eq!(*y, t.g_values[*a]);
        }
        assert_eq!(d, generate_dataset(&m, &t, 50, NoiseSpec::None, None, 1).unwrap());
    }

    #[test]
    fn label_bound_is_enforced() {
        let (m, t) = setup();
        let noise = NoiseSpec::Uniform { half_width: 0.1 };
        let err = generate_dataset(&m, &t, 5, noise, Some(0.01), 1).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "data.c_y"));
        let d = generate_dataset(&m, &t, 500, noise, None, 1).unwrap();
        assert!(d.labels.iter().all(|y| y.abs() <= d.c_y));
    }

    #[test]
    fn excess_risk_of_target_and_zero() {
        let (m, _) = setup();
        let t0 = synthesize_target(&m, 0.0, 1.5, 3).unwrap();
        assert_eq!(excess_risk(&t0.g_values, &t0, &m).unwrap(), 0.0);
        let zero = vec![0.0; m.len()];
        assert!((excess_risk(&zero, &t0, &m).unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn totals_match_sample() {
        let (m, t) = setup();
        let d = generate_dataset(&m, &t, 100, NoiseSpec::Uniform { half_width: 0.1 }, None, 5).unwrap();
        let (b, used) = d.grouped_batch(&m).unwrap();
        assert_eq!(b.n(), 100);
        assert!(used.windows(2).all(|w| w[0] < w[1]));
    }
}
