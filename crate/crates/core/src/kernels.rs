//! Neural tangent kernels and Gram matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen, symmetrize_upper};
use crate::network::{dot, InputPoint, NetworkConfig, Theta};
use crate::rng::{stream_rng, unit_sphere};

/// Empirical NTK `K_M(x, y) = ⟨∇g_θ(x), ∇g_θ(y)⟩_Θ`, written out per neuron:
/// `M^{-1} Σ σ(u_m)σ(v_m) + (xᵀy + γ²) M^{-1} Σ a_m² σ'(u_m)σ'(v_m)`
/// with pre-activations `u_m = ⟨b_m, x⟩ + γ c_m`.
pub fn ntk_empirical(x: &InputPoint, y: &InputPoint, theta0: &Theta, cfg: &NetworkConfig) -> Result<f64> {
    theta0.check_config(cfg)?;
    if x.dim() != cfg.dim || y.dim() != cfg.dim {
        return Err(Error::shape("kernel inputs must match the network input dimension"));
    }
    Ok(ntk_empirical_raw(x.as_slice(), y.as_slice(), theta0, cfg))
}

pub(crate) fn ntk_empirical_raw(x: &[f64], y: &[f64], theta0: &Theta, cfg: &NetworkConfig) -> f64 {
    let act = cfg.activation;
    let (mut s0, mut s1) = (0.0, 0.0);
    for m in 0..cfg.width {
        let b = theta0.column(m);
        let bias = cfg.gamma * theta0.c()[m];
        let (su, du) = act.sigma_and_derivative(dot(b, x) + bias);
        let (sv, dv) = act.sigma_and_derivative(dot(b, y) + bias);
        let am = theta0.a()[m];
        s0 += su * sv;
        s1 += am * am * (du * dv);
    }
    let mw = cfg.width as f64;
    s0 / mw + (dot(x, y) + cfg.gamma * cfg.gamma) * s1 / mw
}

/// How expectations over `b ~ Unif(S^{d-1})` are approximated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quadrature {
    /// `samples` i.i.d. directions from a dedicated seed.
    MonteCarlo { samples: usize, seed: u64 },
    /// Deterministic grid with about `samples` nodes: equispaced angles on the
    /// circle for `d = 2`, Gauss–Legendre in the polar cosine times a
    /// trapezoid rule in azimuth for `d = 3`.
    SphereGrid { samples: usize },
}

/// Default number of Monte Carlo directions for the limit kernel.
pub const DEFAULT_LIMIT_SAMPLES: usize = 200_000;
/// Seed used by the default Monte Carlo estimator of the limit kernel.
pub const DEFAULT_LIMIT_SEED: u64 = 0x4b_494e_4954;

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::MonteCarlo {
            samples: DEFAULT_LIMIT_SAMPLES,
            seed: DEFAULT_LIMIT_SEED,
        }
    }
}

impl Quadrature {
    pub fn samples(&self) -> usize {
        match *self {
            Quadrature::MonteCarlo { samples, .. } | Quadrature::SphereGrid { samples } => samples,
        }
    }

    /// Nodes on the sphere and weights summing to one.
    pub fn nodes(&self, dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        match *self {
            Quadrature::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return Err(Error::config("kernel.quadrature.samples", "need at least one sample"));
                }
                let mut rng = stream_rng(seed, 0);
                let nodes = (0..samples).map(|_| unit_sphere(&mut rng, dim)).collect();
                Ok((nodes, vec![1.0 / samples as f64; samples]))
            }
            Quadrature::SphereGrid { samples } => sphere_grid(dim, samples),
        }
    }
}

fn sphere_grid(dim: usize, samples: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if samples == 0 {
        return Err(Error::config("kernel.quadrature.samples", "need at least one node"));
    }
    match dim {
        1 => Ok((vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5])),
        2 => {
            let q = samples;
            let nodes = (0..q)
                .map(|k| {
                    let t = 2.0 * PI * (k as f64 + 0.5) / q as f64;
                    vec![libm::cos(t), libm::sin(t)]
                })
                .collect();
            Ok((nodes, vec![1.0 / q as f64; q]))
        }
        3 => {
            let nt = libm::ceil(libm::sqrt(samples as f64 / 2.0)).max(1.0) as usize;
            let np = 2 * nt;
            let (z, wz) = gauss_legendre(nt);
            let mut nodes = Vec::with_capacity(nt * np);
            let mut weights = Vec::with_capacity(nt * np);
            for (zi, wi) in z.iter().zip(&wz) {
                let rho = libm::sqrt((1.0 - zi * zi).max(0.0));
                for k in 0..np {
                    let p = 2.0 * PI * (k as f64 + 0.5) / np as f64;
                    nodes.push(vec![rho * libm::cos(p), rho * libm::sin(p), *zi]);
                    weights.push(0.5 * wi / np as f64);
                }
            }
            Ok((nodes, weights))
        }
        _ => Err(Error::config("kernel.quadrature", "sphere grids are available only for d <= 3")),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// The infinite-width NTK
/// `K_∞(x, y) = E_b[σ(bᵀx)σ(bᵀy)] + τ²(xᵀy + γ²) E_b[σ'(bᵀx)σ'(bᵀy)]`
/// with the expectation replaced by a fixed quadrature rule.
#[derive(Debug, Clone)]
pub struct LimitKernel {
    cfg: NetworkConfig,
    quadrature: Quadrature,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl LimitKernel {
    pub fn new(cfg: &NetworkConfig, quadrature: Quadrature) -> Result<Self> {
        let (nodes, weights) = quadrature.nodes(cfg.dim)?;
        Ok(LimitKernel {
            cfg: *cfg,
            quadrature,
            nodes,
            weights,
        })
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn eval(&self, x: &InputPoint, y: &InputPoint) -> f64 {
        self.eval_raw(x.as_slice(), y.as_slice())
    }

    pub(crate) fn eval_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let act = self.cfg.activation;
        let (mut e0, mut e1) = (0.0, 0.0);
        for (b, w) in self.nodes.iter().zip(&self.weights) {
            let (su, du) = act.sigma_and_derivative(dot(b, x));
            let (sv, dv) = act.sigma_and_derivative(dot(b, y));
            e0 += w * su * sv;
            e1 += w * du * dv;
        }
        let g = self.cfg.gamma;
        e0 + self.cfg.tau * self.cfg.tau * (dot(x, y) + g * g) * e1
    }

    /// Estimate with its Monte Carlo standard error (treating the nodes as
    /// i.i.d. draws; only meaningful for equal weights).
    pub fn eval_with_stderr(&self, x: &InputPoint, y: &InputPoint) -> (f64, f64) {
        let act = self.cfg.activation;
        let (x, y) = (x.as_slice(), y.as_slice());
        let g = self.cfg.gamma;
        let scale = self.cfg.tau * self.cfg.tau * (dot(x, y) + g * g);
        let q = self.nodes.len() as f64;
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, b) in self.nodes.iter().enumerate() {
            let (su, du) = act.sigma_and_derivative(dot(b, x));
            let (sv, dv) = act.sigma_and_derivative(dot(b, y));
            let v = su * sv + scale * du * dv;
            let delta = v - mean;
            mean += delta / (k as f64 + 1.0);
            m2 += delta * (v - mean);
        }
        let var = if q > 1.0 { m2 / (q - 1.0) } else { 0.0 };
        (mean, libm::sqrt(var / q))
    }

    /// Gram matrix at `points`, assembled as `S W Sᵀ + τ²(XXᵀ + γ²) ∘ (D W Dᵀ)`
    /// with `S_iq = σ(b_qᵀx_i)`, `D_iq = σ'(b_qᵀx_i)`, processed in node blocks.
    pub fn gram(&self, points: &[InputPoint]) -> Result<KernelMatrix> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Degenerate("Gram matrix of an empty point set".into()));
        }
        let act = self.cfg.activation;
        let block = 2048.min(self.nodes.len());
        let mut e0 = DMatrix::<f64>::zeros(n, n);
        let mut e1 = DMatrix::<f64>::zeros(n, n);
        let mut start = 0;
        while start < self.nodes.len() {
            let end = (start + block).min(self.nodes.len());
            let q = end - start;
            let mut s = DMatrix::<f64>::zeros(n, q);
            let mut d = DMatrix::<f64>::zeros(n, q);
            let mut sw = DMatrix::<f64>::zeros(n, q);
            let mut dw = DMatrix::<f64>::zeros(n, q);
            for (k, (b, &w)) in self.nodes[start..end].iter().zip(&self.weights[start..end]).enumerate() {
                for (i, p) in points.iter().enumerate() {
                    let (sv, dv) = act.sigma_and_derivative(dot(b, p.as_slice()));
                    s[(i, k)] = sv;
                    d[(i, k)] = dv;
                    sw[(i, k)] = sv * w;
                    dw[(i, k)] = dv * w;
                }
            }
            e0 += &sw * s.transpose();
            e1 += &dw * d.transpose();
            start = end;
        }
        let g2 = self.cfg.gamma * self.cfg.gamma;
        let t2 = self.cfg.tau * self.cfg.tau;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = e0[(i, j)] + t2 * (points[i].dot(&points[j]) + g2) * e1[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFiniteKernel { i, j });
                }
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Ok(KernelMatrix::from_entries_unchecked(
            n,
            entries,
            KernelKind::Limit {
                samples: self.nodes.len(),
            },
            self.cfg.kappa_sq(),
        ))
    }
}

/// `K_∞(x, y)` under `quadrature`. Building a [`LimitKernel`] once is cheaper
/// for repeated evaluation.
pub fn ntk_limit(x: &InputPoint, y: &InputPoint, cfg: &NetworkConfig, quadrature: Quadrature) -> Result<f64> {
    if x.dim() != cfg.dim || y.dim() != cfg.dim {
        return Err(Error::shape("kernel inputs must match the network input dimension"));
    }
    Ok(LimitKernel::new(cfg, quadrature)?.eval(x, y))
}

/// Provenance of a Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelKind {
    Empirical { width: usize },
    Limit { samples: usize },
    /// Any other kernel (linear, synthetic spectra, outer-layer features).
    Custom,
}

/// Outcome of clipping negative eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub min_eigenvalue_before: f64,
    pub trace: f64,
    /// Largest absolute change of any entry.
    pub max_change: f64,
    /// Whether the change exceeded `1e-10 · trace`.
    pub changed: bool,
}

/// Symmetric Gram matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
    pub kind: KernelKind,
    pub kappa_sq: f64,
    pub repair: Option<RepairReport>,
}

impl KernelMatrix {
    /// Wraps row-major entries after checking shape, finiteness and exact symmetry.
    pub fn from_entries(n: usize, entries: Vec<f64>, kind: KernelKind, kappa_sq: f64) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::shape(format!("expected {} entries for n = {n}, got {}", n * n, entries.len())));
        }
        for i in 0..n {
            for j in i..n {
                let v = entries[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFiniteKernel { i, j });
                }
                if v.to_bits() != entries[j * n + i].to_bits() {
                    return Err(Error::shape(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_entries_unchecked(n, entries, kind, kappa_sq))
    }

    pub(crate) fn from_entries_unchecked(n: usize, entries: Vec<f64>, kind: KernelKind, kappa_sq: f64) -> Self {
        KernelMatrix {
            n,
            entries,
            kind,
            kappa_sq,
            repair: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        linalg::to_matrix(self.n, &self.entries)
    }

    /// `K v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(sym_eigen(&self.to_matrix())?.values)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.last().copied().unwrap_or(0.0))
    }

    /// Clips negative eigenvalues at zero and records what changed.
    pub fn repair_psd(&mut self) -> Result<RepairReport> {
        let eig = sym_eigen(&self.to_matrix())?;
        let min = eig.values.last().copied().unwrap_or(0.0);
        let trace = self.trace();
        let report = if min >= 0.0 {
            RepairReport {
                min_eigenvalue_before: min,
                trace,
                max_change: 0.0,
                changed: false,
            }
        } else {
            let fixed = eig.apply(|v| v.max(0.0));
            let new = linalg::to_row_major(&fixed);
            let max_change = new.iter().zip(&self.entries).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            self.entries = new;
            let changed = max_change > 1e-10 * trace.abs();
            if changed {
                log::info!("PSD repair changed the Gram matrix by up to {max_change:e} (min eigenvalue {min:e})");
            }
            RepairReport {
                min_eigenvalue_before: min,
                trace,
                max_change,
                changed,
            }
        };
        self.repair = Some(report);
        Ok(report)
    }

    /// The matrix with rows and columns reordered by `perm` (`new[i][j] = old[perm[i]][perm[j]]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::shape("permutation length differs from matrix size"));
        }
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Ok(KernelMatrix {
            n,
            entries,
            kind: self.kind,
            kappa_sq: self.kappa_sq,
            repair: self.repair,
        })
    }
}

/// Gram matrix of an arbitrary kernel. Only the upper triangle is evaluated;
/// the lower triangle is a bit-exact mirror.
pub fn gram<F>(points: &[InputPoint], kernel: F, kind: KernelKind, kappa_sq: f64) -> Result<KernelMatrix>
where
    F: Fn(&InputPoint, &InputPoint) -> f64,
{
    let n = points.len();
    if n == 0 {
        return Err(Error::Degenerate("Gram matrix of an empty point set".into()));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel(&points[i], &points[j]);
            if !v.is_finite() {
                return Err(Error::NonFiniteKernel { i, j });
            }
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(KernelMatrix::from_entries_unchecked(n, entries, kind, kappa_sq))
}

/// Empirical NTK Gram at `points`.
pub fn gram_empirical(points: &[InputPoint], theta0: &Theta, cfg: &NetworkConfig) -> Result<KernelMatrix> {
    theta0.check_config(cfg)?;
    if points.iter().any(|p| p.dim() != cfg.dim) {
        return Err(Error::shape("kernel inputs must match the network input dimension"));
    }
    gram(
        points,
        |x, y| ntk_empirical_raw(x.as_slice(), y.as_slice(), theta0, cfg),
        KernelKind::Empirical { width: cfg.width },
        cfg.kappa_sq(),
    )
}

/// `G Gᵀ` for a row-major `n × p` feature matrix, symmetrized from the upper triangle.
pub fn feature_gram(n: usize, p: usize, features: &[f64], kind: KernelKind, kappa_sq: f64) -> Result<KernelMatrix> {
    if features.len() != n * p {
        return Err(Error::shape("feature matrix length differs from n * p"));
    }
    let g = DMatrix::from_row_slice(n, p, features);
    let mut k = &g * g.transpose();
    symmetrize_upper(&mut k);
    let entries = linalg::to_row_major(&k);
    if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteKernel { i: pos / n, j: pos % n });
    }
    Ok(KernelMatrix::from_entries_unchecked(n, entries, kind, kappa_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::network::{grad, init_symmetric};
    use crate::rng::unit_ball;

    fn points(n: usize, d: usize, seed: u64) -> Vec<InputPoint> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| InputPoint::new(unit_ball(&mut rng, d)).unwrap()).collect()
    }

    #[test]
    fn empirical_kernel_is_gradient_inner_product() {
        let cfg = NetworkConfig::new(32, 3, 0.6, 0.8, Activation::Tanh).unwrap();
        let t0 = init_symmetric(&cfg, 2).unwrap();
        let pts = points(20, 3, 1);
        for x in &pts {
            for y in &pts {
                let k = ntk_empirical(x, y, &t0, &cfg).unwrap();
                let g = grad(&t0, x, &cfg).unwrap().dot(&grad(&t0, y, &cfg).unwrap()).unwrap();
                assert!((k - g).abs() <= 1e-12);
                assert_eq!(k, ntk_empirical(y, x, &t0, &cfg).unwrap());
                assert!(k <= cfg.kappa_sq());
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-14);
        let m10: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((m10 - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_grid_weights_sum_to_one_and_moments_match() {
        for d in [2, 3] {
            let (nodes, w) = Quadrature::SphereGrid { samples: 800 }.nodes(d).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let m2: f64 = nodes.iter().zip(&w).map(|(b, w)| w * b[0] * b[0]).sum();
            assert!((m2 - 1.0 / d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_kernel_diagonal_is_nonnegative() {
        let cfg = NetworkConfig::new(2, 2, 0.5, 1.0, Activation::Tanh).unwrap();
        let k = LimitKernel::new(&cfg, Quadrature::SphereGrid { samples: 256 }).unwrap();
        for x in points(50, 2, 4) {
            assert!(k.eval(&x, &x) >= 0.0);
            assert!(k.eval(&x, &x) <= cfg.kappa_sq());
        }
    }

    #[test]
    fn blocked_limit_gram_matches_pointwise() {
        let cfg = NetworkConfig::new(2, 3, 0.5, 1.0, Activation::Softplus).unwrap();
        let k = LimitKernel::new(&cfg, Quadrature::MonteCarlo { samples: 5000, seed: 1 }).unwrap();
        let pts = points(9, 3, 5);
        let g = k.gram(&pts).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert!((g.get(i, j) - k.eval(&pts[i], &pts[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_of_single_point() {
        let cfg = NetworkConfig::new(8, 2, 0.5, 1.0, Activation::Tanh).unwrap();
        let t0 = init_symmetric(&cfg, 3).unwrap();
        let pts = points(1, 2, 0);
        let g = gram_empirical(&pts, &t0, &cfg).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.get(0, 0), ntk_empirical(&pts[0], &pts[0], &t0, &cfg).unwrap());
    }

    #[test]
    fn non_finite_entries_name_the_pair() {
        let pts = points(3, 2, 0);
        let p2 = pts[2].clone();
        let err = gram(&pts, |x, y| if *x == p2 || *y == p2 { f64::NAN } else { 1.0 }, KernelKind::Custom, 1.0)
            .unwrap_err();
        assert_eq!(err, Error::NonFiniteKernel { i: 0, j: 2 });
    }

    #[test]
    fn repair_clips_negative_eigenvalues() {
        let mut k = KernelMatrix::from_entries(2, vec![1.0, 2.0, 2.0, 1.0], KernelKind::Custom, 4.0).unwrap();
        let rep = k.repair_psd().unwrap();
        assert!(rep.changed);
        assert!((rep.min_eigenvalue_before + 1.0).abs() < 1e-12);
        assert!(k.min_eigenvalue().unwrap() >= -1e-10 * k.trace());
        assert_eq!(k.get(0, 1).to_bits(), k.get(1, 0).to_bits());
    }
}
