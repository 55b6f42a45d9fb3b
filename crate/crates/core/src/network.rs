//! The two-layer network, its symmetric initialization and derivatives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, unit_sphere};

/// Shape and scale of a network `g_θ(x) = M^{-1/2} Σ_m a_m σ(⟨b_m, x⟩ + γ c_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of hidden neurons `M` (even).
    pub width: usize,
    /// Input dimension `d`.
    pub dim: usize,
    /// Bias scale `γ ∈ [0, 1]`.
    pub gamma: f64,
    /// Output-layer initialization scale `τ > 0`.
    pub tau: f64,
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn new(width: usize, dim: usize, gamma: f64, tau: f64, activation: Activation) -> Result<Self> {
        let cfg = NetworkConfig {
            width,
            dim,
            gamma,
            tau,
            activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::config("network.width", format!("width must be even and positive, got {}", self.width)));
        }
        if self.dim == 0 {
            return Err(Error::config("network.dim", "input dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("network.gamma", format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("network.tau", format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Number of scalar parameters, `(d + 2) M`.
    pub fn param_len(&self) -> usize {
        (self.dim + 2) * self.width
    }

    /// Uniform bound `κ² = 4 + 2 c_σ² τ²` on kernel entries.
    pub fn kappa_sq(&self) -> f64 {
        let c = self.activation.c_sigma();
        4.0 + 2.0 * c * c * self.tau * self.tau
    }

    /// Returns the same configuration at another width.
    pub fn with_width(&self, width: usize) -> Result<Self> {
        NetworkConfig::new(width, self.dim, self.gamma, self.tau, self.activation)
    }
}

/// Network parameters `θ = (a, B, c)` stored contiguously as
/// `[a_1..a_M | b_1 | b_2 | .. | b_M | c_1..c_M]`.
///
/// The same layout carries gradients and displacements, and the Euclidean
/// inner product on the flat storage is the `Θ` inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Theta {
    pub fn zeros(width: usize, dim: usize) -> Self {
        Theta {
            width,
            dim,
            data: vec![0.0; (dim + 2) * width],
        }
    }

    pub fn zeros_like(cfg: &NetworkConfig) -> Self {
        Theta::zeros(cfg.width, cfg.dim)
    }

    /// Builds parameters from blocks; `columns[m]` is `b_m`.
    pub fn from_blocks(a: &[f64], columns: &[Vec<f64>], c: &[f64]) -> Result<Self> {
        let width = a.len();
        if columns.len() != width || c.len() != width {
            return Err(Error::shape("a, B and c must have the same number of neurons"));
        }
        let dim = columns.first().map_or(0, |b| b.len());
        if columns.iter().any(|b| b.len() != dim) {
            return Err(Error::shape("all columns of B must have the same length"));
        }
        let mut data = Vec::with_capacity((dim + 2) * width);
        data.extend_from_slice(a);
        for b in columns {
            data.extend_from_slice(b);
        }
        data.extend_from_slice(c);
        Ok(Theta { width, dim, data })
    }

    /// Wraps a flat vector in the layout described on the type.
    pub fn from_flat(width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != (dim + 2) * width {
            return Err(Error::shape(format!(
                "flat parameter vector has length {}, expected {}",
                data.len(),
                (dim + 2) * width
            )));
        }
        Ok(Theta { width, dim, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn a(&self) -> &[f64] {
        &self.data[..self.width]
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.width]
    }

    /// The whole `B` block, column after column.
    pub fn b_block(&self) -> &[f64] {
        &self.data[self.width..self.width * (self.dim + 1)]
    }

    pub fn column(&self, m: usize) -> &[f64] {
        let start = self.width + m * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn column_mut(&mut self, m: usize) -> &mut [f64] {
        let start = self.width + m * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn c(&self) -> &[f64] {
        &self.data[self.width * (self.dim + 1)..]
    }

    pub fn c_mut(&mut self) -> &mut [f64] {
        let start = self.width * (self.dim + 1);
        &mut self.data[start..]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `‖θ‖_Θ`.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    pub fn dot(&self, other: &Theta) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Theta) -> Result<()> {
        self.check_same_shape(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Theta) -> Result<Theta> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x - y).collect();
        Ok(Theta {
            width: self.width,
            dim: self.dim,
            data,
        })
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Theta) -> Result<()> {
        if self.width != other.width || self.dim != other.dim {
            return Err(Error::shape(format!(
                "parameter shapes differ: (M={}, d={}) vs (M={}, d={})",
                self.width, self.dim, other.width, other.dim
            )));
        }
        Ok(())
    }

    pub(crate) fn check_config(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.width != cfg.width || self.dim != cfg.dim {
            return Err(Error::shape(format!(
                "parameters have shape (M={}, d={}) but the configuration expects (M={}, d={})",
                self.width, self.dim, cfg.width, cfg.dim
            )));
        }
        Ok(())
    }
}

/// An input `x` with `‖x‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InputPoint(Vec<f64>);

/// Slack allowed on the unit-norm constraint to absorb rounding of normalized points.
const NORM_SLACK: f64 = 1e-12;

impl InputPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Degenerate("input point has no coordinates".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("input point has non-finite coordinates".into()));
        }
        let n = libm::sqrt(dot(&x, &x));
        if n > 1.0 + NORM_SLACK {
            return Err(Error::Degenerate(format!("input point has norm {n} > 1")));
        }
        Ok(InputPoint(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &InputPoint) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for InputPoint {
    type Error = Error;
    fn try_from(x: Vec<f64>) -> Result<Self> {
        InputPoint::new(x)
    }
}

impl From<InputPoint> for Vec<f64> {
    fn from(x: InputPoint) -> Vec<f64> {
        x.0
    }
}

/// Which parameter blocks are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlocks {
    #[default]
    All,
    /// Only `a` moves; `B` and `c` stay frozen, so the model is linear in its parameters.
    OuterLayer,
}

impl ParamBlocks {
    /// Zeroes the frozen blocks of a gradient-shaped vector.
    pub fn mask(&self, g: &mut Theta) {
        if let ParamBlocks::OuterLayer = self {
            let w = g.width;
            for v in &mut g.data[w..] {
                *v = 0.0;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Symmetric initialization: `a_m = τ` on the first half and `-τ` on the
/// second, `b_{m+M/2} = b_m` uniform on the sphere, `c = 0`. Column `m` is
/// drawn from its own stream of `seed`, so a wider network shares its first
/// columns with a narrower one.
pub fn init_symmetric(cfg: &NetworkConfig, seed: u64) -> Result<Theta> {
    cfg.validate()?;
    let (m, d) = (cfg.width, cfg.dim);
    let half = m / 2;
    let mut theta = Theta::zeros(m, d);
    for k in 0..m {
        theta.a_mut()[k] = if k < half { cfg.tau } else { -cfg.tau };
    }
    for k in 0..half {
        let mut rng = stream_rng(seed, k as u64);
        let b = unit_sphere(&mut rng, d);
        theta.column_mut(k).copy_from_slice(&b);
        theta.column_mut(k + half).copy_from_slice(&b);
    }
    Ok(theta)
}

fn check_input(x: &InputPoint, cfg: &NetworkConfig) -> Result<()> {
    if x.dim() != cfg.dim {
        return Err(Error::shape(format!("input has dimension {}, expected {}", x.dim(), cfg.dim)));
    }
    Ok(())
}

#[inline]
fn preactivation(theta: &Theta, m: usize, x: &[f64], gamma: f64) -> f64 {
    dot(theta.column(m), x) + gamma * theta.c()[m]
}

/// `g_θ(x)`.
pub fn forward(theta: &Theta, x: &InputPoint, cfg: &NetworkConfig) -> Result<f64> {
    theta.check_config(cfg)?;
    check_input(x, cfg)?;
    Ok(forward_raw(theta, x.as_slice(), cfg))
}

pub(crate) fn forward_raw(theta: &Theta, x: &[f64], cfg: &NetworkConfig) -> f64 {
    let act = cfg.activation;
    let a = theta.a();
    let mut s = 0.0;
    for (m, am) in a.iter().enumerate() {
        s += am * act.sigma(preactivation(theta, m, x, cfg.gamma));
    }
    s / libm::sqrt(cfg.width as f64)
}

/// `∇_θ g_θ(x)` in the parameter layout.
pub fn grad(theta: &Theta, x: &InputPoint, cfg: &NetworkConfig) -> Result<Theta> {
    theta.check_config(cfg)?;
    check_input(x, cfg)?;
    let mut g = Theta::zeros_like(cfg);
    grad_into(theta, x.as_slice(), cfg, &mut g.data);
    Ok(g)
}

/// Writes `∇_θ g_θ(x)` into `out` (length `(d+2)M`) and returns `g_θ(x)`.
pub(crate) fn grad_into(theta: &Theta, x: &[f64], cfg: &NetworkConfig, out: &mut [f64]) -> f64 {
    let (mw, d) = (cfg.width, cfg.dim);
    let act = cfg.activation;
    let inv = 1.0 / libm::sqrt(mw as f64);
    let mut value = 0.0;
    for m in 0..mw {
        let am = theta.a()[m];
        let (s, ds) = act.sigma_and_derivative(preactivation(theta, m, x, cfg.gamma));
        value += am * s;
        out[m] = s * inv;
        let coef = am * ds * inv;
        let col = &mut out[mw + m * d..mw + (m + 1) * d];
        for (o, xi) in col.iter_mut().zip(x) {
            *o = coef * xi;
        }
        out[mw * (d + 1) + m] = coef * cfg.gamma;
    }
    value * inv
}

/// `g_θ(x) - g_{θ0}(x) - ⟨∇g_{θ0}(x), θ - θ0⟩_Θ`.
pub fn taylor_remainder(theta: &Theta, theta0: &Theta, x: &InputPoint, cfg: &NetworkConfig) -> Result<f64> {
    theta.check_config(cfg)?;
    theta0.check_config(cfg)?;
    check_input(x, cfg)?;
    let g0 = grad(theta0, x, cfg)?;
    let mut linear = 0.0;
    for ((t, t0), g) in theta.data.iter().zip(&theta0.data).zip(&g0.data) {
        linear += g * (t - t0);
    }
    Ok(forward_raw(theta, x.as_slice(), cfg) - forward_raw(theta0, x.as_slice(), cfg) - linear)
}

/// `‖θ - θ0‖_Θ`.
pub fn theta_distance(theta: &Theta, theta0: &Theta) -> Result<f64> {
    theta.check_same_shape(theta0)?;
    let s: f64 = theta.data.iter().zip(&theta0.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(libm::sqrt(s))
}

/// Gradient Lipschitz constant `C(R) = 8 max{‖σ'‖∞, ‖σ''‖∞ √(R² + τ²)}` on the
/// ball of radius `R` around a symmetric initialization. The gradient is
/// `C(R)/√M`-Lipschitz there, and the Taylor remainder is bounded by
/// `C(R)/√M · ‖θ - θ0‖²`.
pub fn lipschitz_constant(cfg: &NetworkConfig, radius: f64) -> f64 {
    let act = cfg.activation;
    let r = libm::sqrt(radius * radius + cfg.tau * cfg.tau);
    8.0 * act.dsigma_sup().max(act.ddsigma_sup() * r)
}
