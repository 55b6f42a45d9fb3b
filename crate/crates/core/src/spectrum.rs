//! Quadrature-grid Mercer surrogates of the kernel integral operator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_line, loglog_fit, LinearFit};
use crate::kernels::{gram, KernelKind, KernelMatrix};
use crate::linalg::{self, spectral_norm, sym_eigen, symmetrize_upper};
use crate::network::{grad_into, InputPoint, NetworkConfig, Theta};
use crate::rng::{stream_rng, unit_ball, unit_sphere};

/// Eigenvalues at or below this fraction of the largest one are set to zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Reference measure `ρ_X` realized by equal-weight atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// I.i.d. uniform draws on the unit sphere.
    #[default]
    UniformSphere,
    /// I.i.d. uniform draws in the unit ball.
    UniformBall,
    /// Equispaced points on the unit circle (`d = 2` only).
    CircleGrid,
}

/// `count` atoms of `measure` in dimension `dim`, deterministic in `seed`.
pub fn sample_atoms(measure: Measure, count: usize, dim: usize, seed: u64) -> Result<Vec<InputPoint>> {
    if count == 0 || dim == 0 {
        return Err(Error::config("spectrum.grid_size", "need at least one atom in positive dimension"));
    }
    let mut rng = stream_rng(seed, 0);
    let raw: Vec<Vec<f64>> = match measure {
        Measure::UniformSphere => (0..count).map(|_| unit_sphere(&mut rng, dim)).collect(),
        Measure::UniformBall => (0..count).map(|_| unit_ball(&mut rng, dim)).collect(),
        Measure::CircleGrid => {
            if dim != 2 {
                return Err(Error::config("spectrum.measure", "the circle grid exists only for d = 2"));
            }
            circle_points(count)
        }
    };
    raw.into_iter().map(InputPoint::new).collect()
}

fn circle_points(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / count as f64;
            vec![libm::cos(t), libm::sin(t)]
        })
        .collect()
}

/// Finite Mercer system `K(x_i, x_k) = Σ_j μ_j φ_j(x_i) φ_j(x_k)` on weighted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub atoms: Vec<InputPoint>,
    /// Atom weights, summing to one.
    pub weights: Vec<f64>,
    /// `μ_1 ≥ μ_2 ≥ … ≥ 0`.
    pub eigenvalues: Vec<f64>,
    /// Row-major `N × N`: entry `(i, j)` is `φ_j(x_i)`.
    pub eigenvectors: Vec<f64>,
    pub kind: KernelKind,
    pub seed: u64,
    /// Free-form label of the kernel (for reports).
    pub label: String,
}

/// Nyström surrogate of a kernel under `measure`: the Gram matrix at `size`
/// atoms, conjugated by the square root of the weights and eigendecomposed.
pub fn mercer_nystrom<F>(
    kernel: F,
    size: usize,
    measure: Measure,
    dim: usize,
    seed: u64,
    kind: KernelKind,
    kappa_sq: f64,
) -> Result<SpectralModel>
where
    F: Fn(&InputPoint, &InputPoint) -> f64,
{
    if size < 2 {
        return Err(Error::config("spectrum.grid_size", "need at least two atoms"));
    }
    let atoms = sample_atoms(measure, size, dim, seed)?;
    let k = gram(&atoms, kernel, kind, kappa_sq)?;
    let weights = vec![1.0 / size as f64; size];
    SpectralModel::from_gram(atoms, weights, &k, seed)
}

impl SpectralModel {
    /// Eigensystem of `W^{1/2} K W^{1/2}` mapped back to functions on the atoms
    /// (`φ = W^{-1/2} U`). Negative and negligible eigenvalues become zero.
    pub fn from_gram(atoms: Vec<InputPoint>, weights: Vec<f64>, gram: &KernelMatrix, seed: u64) -> Result<Self> {
        let n = atoms.len();
        if gram.n() != n || weights.len() != n {
            return Err(Error::shape("atoms, weights and Gram matrix sizes differ"));
        }
        check_weights(&weights)?;
        let sw: Vec<f64> = weights.iter().map(|w| libm::sqrt(*w)).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                a[(i, j)] = sw[i] * gram.get(i, j) * sw[j];
            }
        }
        symmetrize_upper(&mut a);
        let eig = sym_eigen(&a)?;
        let top = eig.values.first().copied().unwrap_or(0.0);
        let eigenvalues = eig
            .values
            .iter()
            .map(|&v| if v > EIGENVALUE_FLOOR * top && top > 0.0 { v } else { 0.0 })
            .collect();
        let mut eigenvectors = vec![0.0; n * n];
        for i in 0..n {
            let s = 1.0 / sw[i];
            for j in 0..n {
                eigenvectors[i * n + j] = eig.vectors[(i, j)] * s;
            }
        }
        Ok(SpectralModel {
            atoms,
            weights,
            eigenvalues,
            eigenvectors,
            kind: gram.kind,
            seed,
            label: String::new(),
        })
    }

    /// Model with a prescribed spectrum on equispaced points of the unit
    /// circle. The eigenfunctions are the real Fourier basis
    /// `1, √2 cos θ, √2 sin θ, √2 cos 2θ, …` and `μ_j = scale · j^{-c}`.
    pub fn power_law_circle(size: usize, c: f64, scale: f64) -> Result<Self> {
        if size < 4 || size % 2 != 0 {
            return Err(Error::config("spectrum.grid_size", "the Fourier surrogate needs an even size >= 4"));
        }
        if !(c > 0.0 && scale > 0.0) {
            return Err(Error::config("spectrum.decay", "decay and scale must be positive"));
        }
        let raw = circle_points(size);
        let n = size;
        let mut eigenvectors = vec![0.0; n * n];
        let s2 = core::f64::consts::SQRT_2;
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            let row = &mut eigenvectors[i * n..(i + 1) * n];
            row[0] = 1.0;
            for k in 1..n / 2 {
                row[2 * k - 1] = s2 * libm::cos(k as f64 * t);
                row[2 * k] = s2 * libm::sin(k as f64 * t);
            }
            row[n - 1] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let eigenvalues = (1..=n).map(|j| scale * libm::pow(j as f64, -c)).collect();
        let atoms = raw.into_iter().map(InputPoint::new).collect::<Result<Vec<_>>>()?;
        Ok(SpectralModel {
            atoms,
            weights: vec![1.0 / n as f64; n],
            eigenvalues,
            eigenvectors,
            kind: KernelKind::Custom,
            seed: 0,
            label: format!("power_law_circle(c={c})"),
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.dim())
    }

    #[inline]
    pub fn phi(&self, atom: usize, j: usize) -> f64 {
        self.eigenvectors[atom * self.len() + j]
    }

    pub fn positive_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }

    fn phi_matrix(&self) -> DMatrix<f64> {
        linalg::to_matrix(self.len(), &self.eigenvectors)
    }

    /// Gram matrix reconstructed from all eigenpairs, `Φ diag(μ) Φᵀ`.
    pub fn gram_at_atoms(&self) -> KernelMatrix {
        let n = self.len();
        let phi = self.phi_matrix();
        let mut scaled = phi.clone();
        for j in 0..n {
            let mu = self.eigenvalues[j];
            for i in 0..n {
                scaled[(i, j)] *= mu;
            }
        }
        let mut k = &scaled * phi.transpose();
        symmetrize_upper(&mut k);
        let kappa_sq = (0..n).fold(0.0f64, |a, i| a.max(k[(i, i)]));
        KernelMatrix::from_entries_unchecked(n, linalg::to_row_major(&k), self.kind, kappa_sq)
    }

    /// Values at the atoms of `Σ_j coeffs_j φ_j`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if coeffs.len() != n {
            return Err(Error::shape("coefficient vector length differs from the number of eigenfunctions"));
        }
        Ok((0..n)
            .map(|i| {
                let row = &self.eigenvectors[i * n..(i + 1) * n];
                row.iter().zip(coeffs).map(|(p, c)| p * c).sum()
            })
            .collect())
    }

    /// Coefficients `⟨f, φ_j⟩_w` of values at the atoms.
    pub fn project(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if values.len() != n {
            return Err(Error::shape("value vector length differs from the number of atoms"));
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let wv = self.weights[i] * values[i];
            let row = &self.eigenvectors[i * n..(i + 1) * n];
            for (o, p) in out.iter_mut().zip(row) {
                *o += wv * p;
            }
        }
        Ok(out)
    }

    /// `‖f‖_{L²(w)}` of values at the atoms.
    pub fn weighted_norm(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::shape("value vector length differs from the number of atoms"));
        }
        Ok(libm::sqrt(self.weights.iter().zip(values).map(|(w, v)| w * v * v).sum()))
    }

    /// `max_{i,j} |⟨φ_i, φ_j⟩_w - δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.len();
        let mut phi = self.phi_matrix();
        for i in 0..n {
            let s = libm::sqrt(self.weights[i]);
            for j in 0..n {
                phi[(i, j)] *= s;
            }
        }
        let g = phi.transpose() * &phi;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Maximum relative error of the eigen-reconstruction against `gram`, scaled by its largest entry.
    pub fn reconstruction_defect(&self, gram: &KernelMatrix) -> Result<f64> {
        if gram.n() != self.len() {
            return Err(Error::shape("Gram matrix size differs from the model"));
        }
        let back = self.gram_at_atoms();
        let scale = gram.max_abs_entry().max(f64::MIN_POSITIVE);
        Ok(back
            .entries()
            .iter()
            .zip(gram.entries())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
            / scale)
    }

    /// `N(λ) = Σ_j μ_j / (μ_j + λ)`.
    pub fn effective_dimension(&self, lambda: f64) -> Result<f64> {
        effective_dimension(&self.eigenvalues, lambda)
    }

    /// Decay exponent fitted on eigenvalues `j ∈ [lo, hi]` (1-based). The
    /// default range is `[4, N/8]`, cut at the last positive eigenvalue.
    pub fn fit_decay_exponent(&self, range: Option<(usize, usize)>) -> Result<DecayFit> {
        let (lo, hi) = range.unwrap_or_else(|| self.default_fit_range());
        fit_decay_exponent(&self.eigenvalues, lo, hi)
    }

    /// Decay exponent fitted on `N(λ)` for `λ` spanning the eigenvalues of the default fit range.
    pub fn fit_effdim_exponent(&self, range: Option<(usize, usize)>) -> Result<DecayFit> {
        let (lo, hi) = range.unwrap_or_else(|| self.default_fit_range());
        fit_effdim_exponent(&self.eigenvalues, lo, hi)
    }

    pub fn default_fit_range(&self) -> (usize, usize) {
        let hi = (self.len() / 8).min(self.positive_count()).max(1);
        (4.min(hi), hi)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::config("spectrum.weights", "atom weights must be positive"));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::config("spectrum.weights", format!("atom weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// `Σ_j μ_j / (μ_j + λ)` over the nonnegative part of a spectrum.
pub fn effective_dimension(eigenvalues: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda", "the regularization parameter must be positive"));
    }
    Ok(eigenvalues.iter().filter(|&&m| m > 0.0).map(|m| m / (m + lambda)).sum())
}

/// A fitted decay exponent `b̂` together with the underlying log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub b_hat: f64,
    pub fit: LinearFit,
    pub j_lo: usize,
    pub j_hi: usize,
}

/// Slope `s` of `ln μ_j` against `ln j` for `j ∈ [lo, hi]` (1-based); returns `b̂ = -1/s`.
pub fn fit_decay_exponent(eigenvalues: &[f64], lo: usize, hi: usize) -> Result<DecayFit> {
    let (xs, ys) = usable_range(eigenvalues, lo, hi)?;
    let fit = fit_line(&xs, &ys)?;
    if !(fit.slope < 0.0) {
        return Err(Error::Degenerate("eigenvalues do not decay over the fit range".into()));
    }
    Ok(DecayFit {
        b_hat: -1.0 / fit.slope,
        fit,
        j_lo: lo,
        j_hi: hi,
    })
}

fn usable_range(eigenvalues: &[f64], lo: usize, hi: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if lo == 0 || hi < lo || hi > eigenvalues.len() {
        return Err(Error::config("spectrum.fit_range", format!("invalid range [{lo}, {hi}]")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (lo..=hi)
        .filter(|&j| eigenvalues[j - 1] > 0.0)
        .map(|j| (libm::log(j as f64), libm::log(eigenvalues[j - 1])))
        .unzip();
    if xs.len() < 4 {
        return Err(Error::Degenerate(format!(
            "only {} positive eigenvalues in [{lo}, {hi}]; at least 4 are needed",
            xs.len()
        )));
    }
    Ok((xs, ys))
}

/// Number of regularization levels used by [`fit_effdim_exponent`].
const EFFDIM_GRID: usize = 24;

/// Fits `N(λ) ∝ λ^{-b}` on a log-spaced grid of `λ` between `μ_hi` and `μ_lo`.
pub fn fit_effdim_exponent(eigenvalues: &[f64], lo: usize, hi: usize) -> Result<DecayFit> {
    usable_range(eigenvalues, lo, hi)?;
    let (l_max, l_min) = (eigenvalues[lo - 1], eigenvalues[hi - 1]);
    if !(l_min > 0.0 && l_max > l_min) {
        return Err(Error::Degenerate("effective-dimension fit needs a decaying positive range".into()));
    }
    let (a, b) = (libm::log(l_min), libm::log(l_max));
    let lambdas: Vec<f64> = (0..EFFDIM_GRID)
        .map(|k| libm::exp(a + (b - a) * k as f64 / (EFFDIM_GRID - 1) as f64))
        .collect();
    let values = lambdas
        .iter()
        .map(|&l| effective_dimension(eigenvalues, l))
        .collect::<Result<Vec<_>>>()?;
    let fit = loglog_fit(&lambdas, &values)?;
    Ok(DecayFit {
        b_hat: -fit.slope,
        fit,
        j_lo: lo,
        j_hi: hi,
    })
}

/// A regression function `g_ρ = L^r h_ρ` with `‖h_ρ‖ = R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTarget {
    pub r: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub seed: u64,
    /// Coefficients of `h_ρ` in the eigenbasis.
    pub h_coeffs: Vec<f64>,
    /// `g_ρ` at the atoms.
    pub g_values: Vec<f64>,
}

impl SourceTarget {
    /// Coefficients `μ_j^r h_j` of `g_ρ`.
    pub fn g_coeffs(&self, model: &SpectralModel) -> Vec<f64> {
        model
            .eigenvalues
            .iter()
            .zip(&self.h_coeffs)
            .map(|(&m, &h)| if m > 0.0 { libm::pow(m, self.r) * h } else { 0.0 })
            .collect()
    }

    /// RKHS norm `Σ_j g_j² / μ_j` over positive eigenvalues.
    pub fn rkhs_norm_sq(&self, model: &SpectralModel) -> f64 {
        self.g_coeffs(model)
            .iter()
            .zip(&model.eigenvalues)
            .filter(|(_, &m)| m > 0.0)
            .map(|(g, m)| g * g / m)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.g_values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Draws `h_j = ±j^{-1/2}` with random signs on the positive part of the
/// spectrum, rescales to `‖h‖ = R`, and sets `g_ρ = Σ_j μ_j^r h_j φ_j`.
pub fn synthesize_target(model: &SpectralModel, r: f64, radius: f64, seed: u64) -> Result<SourceTarget> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::config("target.r", "the source exponent must be nonnegative"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config("target.R", "the source radius must be positive"));
    }
    if model.positive_count() == 0 {
        return Err(Error::Degenerate("spectrum has no positive eigenvalue".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut h: Vec<f64> = model
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            if m > 0.0 {
                sign / libm::sqrt(j as f64 + 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let norm = libm::sqrt(h.iter().map(|v| v * v).sum());
    for v in &mut h {
        *v *= radius / norm;
    }
    let mut target = SourceTarget {
        r,
        radius,
        seed,
        h_coeffs: h,
        g_values: Vec::new(),
    };
    target.g_values = model.synthesize(&target.g_coeffs(model))?;
    Ok(target)
}

/// Recovers the source exponent by regressing `ln|g_j| - ln|h_j|` on `ln μ_j`
/// over components with `μ_j > 1e-10`, using coefficients projected from the
/// target values.
pub fn recover_source_exponent(model: &SpectralModel, target: &SourceTarget) -> Result<f64> {
    let g = model.project(&target.g_values)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = model
        .eigenvalues
        .iter()
        .zip(g.iter().zip(&target.h_coeffs))
        .filter(|(&m, (gj, hj))| m > 1e-10 && gj.abs() > 0.0 && hj.abs() > 0.0)
        .map(|(&m, (gj, hj))| (libm::log(m), libm::log(gj.abs()) - libm::log(hj.abs())))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::Degenerate("too few components to recover the source exponent".into()));
    }
    if xs.iter().all(|x| (x - xs[0]).abs() < 1e-14) {
        return Err(Error::Degenerate("all usable eigenvalues coincide".into()));
    }
    Ok(fit_line(&xs, &ys)?.slope)
}

/// `‖Ĉ_λ^{-1/2} C_λ^{1/2}‖` for symmetric positive semidefinite `C`, `Ĉ`.
pub fn concentration_norm(c: &DMatrix<f64>, c_hat: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda", "the regularization parameter must be positive"));
    }
    let half = sym_eigen(c)?.apply(|v| libm::sqrt(v.max(0.0) + lambda));
    let inv_half = sym_eigen(c_hat)?.apply(|v| 1.0 / libm::sqrt(v.max(0.0) + lambda));
    spectral_norm(&(inv_half * half))
}

/// Second-moment matrix `n^{-1} Σ_i ∇g_{θ0}(x_i) ∇g_{θ0}(x_i)ᵀ`.
pub fn tangent_covariance(theta0: &Theta, cfg: &NetworkConfig, points: &[InputPoint]) -> Result<DMatrix<f64>> {
    theta0.check_config(cfg)?;
    let p = cfg.param_len();
    let n = points.len();
    if n == 0 {
        return Err(Error::Degenerate("covariance of an empty sample".into()));
    }
    let mut feats = DMatrix::<f64>::zeros(p, n);
    let mut buf = vec![0.0; p];
    for (i, x) in points.iter().enumerate() {
        if x.dim() != cfg.dim {
            return Err(Error::shape("sample dimension differs from the network input dimension"));
        }
        grad_into(theta0, x.as_slice(), cfg, &mut buf);
        feats.set_column(i, &nalgebra::DVector::from_column_slice(&buf));
    }
    let mut c = &feats * feats.transpose();
    c /= n as f64;
    symmetrize_upper(&mut c);
    Ok(c)
}

/// Per-seed norms of `Ĉ_λ^{-1/2} C_λ^{1/2}` and the fraction at or below 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub norms: Vec<f64>,
    pub pass_rate: f64,
}

/// Compares the population tangent covariance (estimated from `big_n` draws
/// of `measure` with `population_seed`) with empirical covariances from `n`
/// fresh draws per seed.
#[allow(clippy::too_many_arguments)]
pub fn covariance_concentration_check(
    theta0: &Theta,
    cfg: &NetworkConfig,
    measure: Measure,
    n: usize,
    big_n: usize,
    lambda: f64,
    population_seed: u64,
    seeds: &[u64],
) -> Result<ConcentrationReport> {
    if cfg.param_len() > 4000 {
        return Err(Error::config("network.width", "tangent feature dimension exceeds 4000"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let population = sample_atoms(measure, big_n, cfg.dim, population_seed)?;
    let c = tangent_covariance(theta0, cfg, &population)?;
    let mut norms = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let sample = sample_atoms(measure, n, cfg.dim, s)?;
        let c_hat = tangent_covariance(theta0, cfg, &sample)?;
        norms.push(concentration_norm(&c, &c_hat, lambda)?);
    }
    let pass = norms.iter().filter(|&&v| v <= 2.0).count();
    Ok(ConcentrationReport {
        pass_rate: pass as f64 / norms.len() as f64,
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::kernels::{LimitKernel, Quadrature};
    use crate::network::init_symmetric;

    fn synthetic(c: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|j| libm::pow(j as f64, -c)).collect()
    }

    #[test]
    fn linear_kernel_on_circle_has_two_equal_eigenvalues() {
        let m = mercer_nystrom(|x, y| x.dot(y), 64, Measure::CircleGrid, 2, 0, KernelKind::Custom, 1.0).unwrap();
        assert_eq!(m.positive_count(), 2);
        assert!((m.eigenvalues[0] - 0.5).abs() < 1e-12);
        assert!((m.eigenvalues[1] - 0.5).abs() < 1e-12);
        assert!(m.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn trace_identity_and_reconstruction() {
        let cfg = NetworkConfig::new(2, 2, 0.5, 1.0, Activation::Tanh).unwrap();
        let k = LimitKernel::new(&cfg, Quadrature::SphereGrid { samples: 512 }).unwrap();
        let atoms = sample_atoms(Measure::UniformSphere, 128, 2, 3).unwrap();
        let g = k.gram(&atoms).unwrap();
        let m = SpectralModel::from_gram(atoms, vec![1.0 / 128.0; 128], &g, 3).unwrap();
        let tr: f64 = (0..128).map(|i| g.get(i, i) / 128.0).sum();
        let s: f64 = m.eigenvalues.iter().sum();
        assert!((s - tr).abs() < 1e-10 * tr.max(1.0));
        assert!(m.reconstruction_defect(&g).unwrap() < 1e-6);
        assert!(m.orthonormality_defect() < 1e-8);
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fourier_surrogate_is_orthonormal() {
        let m = SpectralModel::power_law_circle(64, 1.5, 0.5).unwrap();
        assert!(m.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn effective_dimension_limits() {
        assert_eq!(effective_dimension(&[1.0], 1.0).unwrap(), 0.5);
        let eigs = [0.5, 0.25, 0.1, 0.0];
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = effective_dimension(&eigs, libm::pow(10.0, k as f64 - 10.0)).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!((effective_dimension(&eigs, 1e-14).unwrap() - 3.0).abs() < 1e-10);
        assert!(effective_dimension(&eigs, 1e14).unwrap() < 1e-13);
        assert!(effective_dimension(&eigs, 0.0).is_err());
    }

    #[test]
    fn decay_fit_on_synthetic_spectra() {
        for (c, b) in [(2.0, 0.5), (1.0, 1.0)] {
            let eigs = synthetic(c, 4096);
            let f = fit_decay_exponent(&eigs, 4, 512).unwrap();
            assert!((f.b_hat - b).abs() < 0.02);
            let scaled: Vec<f64> = eigs.iter().map(|v| 7.0 * v).collect();
            let g = fit_decay_exponent(&scaled, 4, 512).unwrap();
            assert!((f.b_hat - g.b_hat).abs() < 1e-12);
        }
        assert!(fit_decay_exponent(&[1.0, 0.5, 0.0, 0.0, 0.0], 1, 5).is_err());
    }

    #[test]
    fn effdim_fit_on_square_decay() {
        let eigs = synthetic(2.0, 10_000);
        let f = fit_effdim_exponent(&eigs, 10, 1000).unwrap();
        assert!((f.b_hat - 0.5).abs() < 0.05, "{}", f.b_hat);
    }

    #[test]
    fn target_norms() {
        let m = SpectralModel::power_law_circle(128, 1.5, 0.5).unwrap();
        let t0 = synthesize_target(&m, 0.0, 2.0, 5).unwrap();
        let h: f64 = t0.h_coeffs.iter().map(|v| v * v).sum();
        assert!((libm::sqrt(h) - 2.0).abs() < 1e-10);
        assert!((m.weighted_norm(&t0.g_values).unwrap() - 2.0).abs() < 1e-10);
        let t1 = synthesize_target(&m, 1.0, 2.0, 5).unwrap();
        assert!(m.weighted_norm(&t1.g_values).unwrap() < m.weighted_norm(&t0.g_values).unwrap());
        let th = synthesize_target(&m, 0.5, 2.0, 5).unwrap();
        assert!((th.rkhs_norm_sq(&m) - 4.0).abs() < 1e-9);
        let r = recover_source_exponent(&m, &t1).unwrap();
        assert!((r - 1.0).abs() < 0.05);
    }

    #[test]
    fn concentration_norm_identities() {
        let cfg = NetworkConfig::new(8, 2, 0.5, 1.0, Activation::Tanh).unwrap();
        let t0 = init_symmetric(&cfg, 1).unwrap();
        let pts = sample_atoms(Measure::UniformSphere, 300, 2, 2).unwrap();
        let c = tangent_covariance(&t0, &cfg, &pts).unwrap();
        assert!((concentration_norm(&c, &c, 0.1).unwrap() - 1.0).abs() < 1e-10);
        let few = sample_atoms(Measure::UniformSphere, 3, 2, 9).unwrap();
        let c_hat = tangent_covariance(&t0, &cfg, &few).unwrap();
        let lam = cfg.kappa_sq();
        assert!(concentration_norm(&c, &c_hat, lam).unwrap() <= libm::sqrt(2.0) + 1e-12);
    }
}
