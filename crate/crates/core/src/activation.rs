//! Twice-differentiable activations with Lipschitz second derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation function together with its first two derivatives and the
/// constants needed by the width-dependent bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `tanh`; `sup|σ'| = 1`, `sup|σ''| = 4/(3√3)`, `σ''` is 2-Lipschitz.
    Tanh,
    /// `log(1 + e^u)`, the smooth surrogate of ReLU.
    Softplus,
}

const TANH_DDSIGMA_SUP: f64 = 0.769_800_358_919_501_1; // 4 / (3 sqrt 3)
const SOFTPLUS_LIP_DDSIGMA: f64 = 0.096_225_044_864_937_63; // 1 / (6 sqrt 3)

impl Activation {
    /// Parses an activation id. ReLU and other non-smooth activations are
    /// rejected because they have no bounded second derivative.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "relu" | "leaky_relu" | "abs" => Err(Error::config(
                "network.activation",
                "activation is not twice differentiable with a Lipschitz second derivative",
            )),
            _ => Err(Error::config("network.activation", "unknown activation id")),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(u),
            Activation::Softplus => {
                if u > 0.0 {
                    u + libm::log1p(libm::exp(-u))
                } else {
                    libm::log1p(libm::exp(u))
                }
            }
        }
    }

    #[inline]
    pub fn dsigma(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(u);
                1.0 - t * t
            }
            Activation::Softplus => logistic(u),
        }
    }

    #[inline]
    pub fn ddsigma(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(u);
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = logistic(u);
                s * (1.0 - s)
            }
        }
    }

    /// `(σ(u), σ'(u))` in one evaluation.
    #[inline]
    pub fn sigma_and_derivative(&self, u: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(u);
                (t, 1.0 - t * t)
            }
            Activation::Softplus => (self.sigma(u), logistic(u)),
        }
    }

    /// `sup_u |σ'(u)|`.
    pub fn dsigma_sup(&self) -> f64 {
        1.0
    }

    /// `sup_u |σ''(u)|`.
    pub fn ddsigma_sup(&self) -> f64 {
        match self {
            Activation::Tanh => TANH_DDSIGMA_SUP,
            Activation::Softplus => 0.25,
        }
    }

    /// A common bound on `|σ'|` and `|σ''|`.
    pub fn c_sigma(&self) -> f64 {
        self.dsigma_sup().max(self.ddsigma_sup())
    }

    /// Lipschitz constant of `σ''` (the sup of `|σ'''|`).
    pub fn lip_ddsigma(&self) -> f64 {
        match self {
            Activation::Tanh => 2.0,
            Activation::Softplus => SOFTPLUS_LIP_DDSIGMA,
        }
    }
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    const ALL: [Activation; 2] = [Activation::Tanh, Activation::Softplus];

    fn grid() -> Vec<f64> {
        (0..=4000).map(|i| -10.0 + 20.0 * i as f64 / 4000.0).collect()
    }

    #[test]
    fn relu_is_rejected() {
        assert!(matches!(Activation::from_id("relu"), Err(Error::Config { .. })));
        assert_eq!(Activation::from_id("tanh").unwrap(), Activation::Tanh);
    }

    #[test]
    fn derivative_bounds_hold_on_grid() {
        for act in ALL {
            for u in grid() {
                assert!(act.dsigma(u).abs() <= act.c_sigma() + 1e-15);
                assert!(act.ddsigma(u).abs() <= act.c_sigma() + 1e-15);
                assert!(act.ddsigma(u).abs() <= act.ddsigma_sup() + 1e-12);
            }
        }
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let h = 1e-5;
        for act in ALL {
            for u in grid() {
                let fd1 = (act.sigma(u + h) - act.sigma(u - h)) / (2.0 * h);
                let fd2 = (act.dsigma(u + h) - act.dsigma(u - h)) / (2.0 * h);
                let d1 = act.dsigma(u);
                let d2 = act.ddsigma(u);
                assert!((fd1 - d1).abs() <= 1e-5 * d1.abs().max(1.0), "{:?} σ' at {u}", act);
                assert!((fd2 - d2).abs() <= 1e-5 * d2.abs().max(1.0), "{:?} σ'' at {u}", act);
            }
        }
    }

    #[test]
    fn second_derivative_is_lipschitz_on_grid_pairs() {
        for act in ALL {
            let g = grid();
            for w in g.windows(7) {
                let (u, v) = (w[0], w[6]);
                let lhs = (act.ddsigma(u) - act.ddsigma(v)).abs();
                assert!(lhs <= act.lip_ddsigma() * (u - v).abs() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let a = Activation::Softplus;
        assert_eq!(a.sigma(800.0), 800.0);
        assert!(a.sigma(-800.0) >= 0.0);
        assert!(a.dsigma(-800.0).is_finite());
    }
}
