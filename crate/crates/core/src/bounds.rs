//! Closed-form envelopes: stopping time, width thresholds, weight radius and rates.
//!
//! Unnamed absolute constants are exposed as a parameter (default 1) and
//! the resulting values are envelopes up to that constant.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;

/// Problem constants shared by all envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Source exponent.
    pub r: f64,
    /// Capacity (effective-dimension) exponent.
    pub b: f64,
    /// Source radius.
    #[serde(rename = "R")]
    pub radius: f64,
    /// `κ = √(4 + 2c_σ²τ²)`.
    pub kappa: f64,
    pub alpha: f64,
    pub delta: f64,
    pub c_y: f64,
    /// The unnamed constant in front of width thresholds and rates.
    pub constant: f64,
}

impl BoundConfig {
    /// Takes `κ` from the network configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn new(cfg: &NetworkConfig, r: f64, b: f64, radius: f64, alpha: f64, delta: f64, c_y: f64, constant: f64) -> Result<Self> {
        let bc = BoundConfig {
            r,
            b,
            radius,
            kappa: kappa(cfg),
            alpha,
            delta,
            c_y,
            constant,
        };
        bc.validate()?;
        Ok(bc)
    }

    pub fn validate(&self) -> Result<()> {
        check_regime(self.r, self.b)?;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config("bounds.delta", format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if !(self.alpha > 0.0 && self.alpha * self.kappa * self.kappa < 1.0) {
            return Err(Error::config("bounds.alpha", "step size must lie in (0, 1/kappa^2)"));
        }
        if !(self.constant > 0.0) {
            return Err(Error::config("bounds.constant", "the envelope constant must be positive"));
        }
        if !(self.radius > 0.0 && self.c_y > 0.0) {
            return Err(Error::config("bounds.R", "R and C_Y must be positive"));
        }
        Ok(())
    }
}

/// `κ = √(4 + 2c_σ²τ²)`.
pub fn kappa(cfg: &NetworkConfig) -> f64 {
    libm::sqrt(cfg.kappa_sq())
}

fn check_regime(r: f64, b: f64) -> Result<()> {
    if !(r >= 0.0 && b > 0.0 && 2.0 * r + b > 1.0) {
        return Err(Error::config("bounds.r", format!("need r >= 0, b > 0 and 2r + b > 1, got r = {r}, b = {b}")));
    }
    Ok(())
}

/// `η_v(t)`, an upper bound on `Σ_{i ≤ t} i^{-v}`:
/// `v/(v-1)` for `v > 1`, `1 + ln t` for `v = 1` and `t^{1-v}/(1-v)` for `v < 1`.
pub fn eta(v: f64, t: u64) -> f64 {
    debug_assert!(v >= 0.0 && t >= 1);
    let tf = t as f64;
    if v > 1.0 {
        v / (v - 1.0)
    } else if v == 1.0 {
        1.0 + libm::log(tf)
    } else {
        libm::pow(tf, 1.0 - v) / (1.0 - v)
    }
}

/// Relative tolerance under which a computed power counts as an integer.
const INTEGER_SNAP: f64 = 1e-9;

/// `T_n = ⌈n^{1/(2r+b)}⌉`.
pub fn stopping_time(n: usize, r: f64, b: f64) -> Result<usize> {
    check_regime(r, b)?;
    if n == 0 {
        return Err(Error::config("n", "sample size must be positive"));
    }
    let v = libm::pow(n as f64, 1.0 / (2.0 * r + b));
    let rounded = libm::round(v);
    let t = if (v - rounded).abs() <= INTEGER_SNAP * rounded.max(1.0) {
        rounded
    } else {
        libm::ceil(v)
    };
    Ok((t as usize).max(1))
}

/// Width threshold `d^{5/2} C log⁶(T) · T^{2r}` for `r ≥ 1/2` and
/// `d^{5/2} C log⁶(T) · T^{3-4r} log^{10}(96/δ)` for `r < 1/2`, with `T = T_n`.
pub fn neuron_threshold(n: usize, r: f64, b: f64, d: usize, delta: f64, constant: f64) -> Result<f64> {
    let t = stopping_time(n, r, b)? as f64;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config("bounds.delta", "delta must lie in (0, 1]"));
    }
    let base = libm::pow(d as f64, 2.5) * constant * libm::pow(libm::log(t), 6.0);
    Ok(if r < 0.5 {
        base * libm::pow(t, 3.0 - 4.0 * r) * libm::pow(libm::log(96.0 / delta), 10.0)
    } else {
        base * libm::pow(t, 2.0 * r)
    })
}

/// `B_δ(λ) = 3/2 + 14κ log(60/δ) √(N(λ) log(60/δ) / (λn))`.
pub fn b_delta(lambda: f64, n: usize, delta: f64, kappa: f64, effdim: f64) -> f64 {
    let l = libm::log(60.0 / delta);
    1.5 + 14.0 * kappa * l * libm::sqrt(effdim * l / (lambda * n as f64))
}

/// `B_τ = 80 log(T) B_δ(1/T)`.
pub fn weight_radius<F: Fn(f64) -> f64>(t: usize, n: usize, delta: f64, kappa: f64, effdim_at: F) -> Result<f64> {
    if t < 3 {
        return Err(Error::config("T", "the weight radius needs T >= 3"));
    }
    if n == 0 || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config("bounds.delta", "need n >= 1 and delta in (0, 1]"));
    }
    let lambda = 1.0 / t as f64;
    Ok(80.0 * libm::log(t as f64) * b_delta(lambda, n, delta, kappa, effdim_at(lambda)))
}

/// `C n^{-r/(2r+b)}` for each `n`.
pub fn rate_curve(n_grid: &[usize], r: f64, b: f64, constant: f64) -> Result<Vec<(usize, f64)>> {
    check_regime(r, b)?;
    let e = -r / (2.0 * r + b);
    Ok(n_grid.iter().map(|&n| (n, constant * libm::pow(n as f64, e))).collect())
}

/// Width schedule for controlling weight movement up to step `T`:
/// `C d^5 log⁴(T) T^{2r}` for `r ≥ 1/2` and `C d^5 log⁴(T) T^{3-4r}` otherwise.
pub fn weight_width(t: usize, r: f64, d: usize, constant: f64) -> f64 {
    let tf = t as f64;
    let e = if r >= 0.5 { 2.0 * r } else { 3.0 - 4.0 * r };
    constant * libm::pow(d as f64, 5.0) * libm::pow(libm::log(tf), 4.0) * libm::pow(tf, e)
}

/// Growth profile of `sup_t ‖θ_t - θ0‖`: `log T` for `r ≥ 1/2`, `T^{1/2 - r}` otherwise.
pub fn weight_envelope(t: usize, r: f64) -> f64 {
    let tf = t as f64;
    if r >= 0.5 {
        libm::log(tf)
    } else {
        libm::pow(tf, 0.5 - r)
    }
}
