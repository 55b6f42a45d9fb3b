//! Full-batch gradient descent on the empirical least-squares risk.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{dot, forward_raw, grad_into, init_symmetric, InputPoint, NetworkConfig, ParamBlocks, Theta};

/// Training sample, optionally grouped by distinct input: point `a` occurs
/// `counts[a]` times with labels summing to `label_sums[a]` and squared labels
/// summing to `label_sq_sums[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub points: Vec<InputPoint>,
    pub counts: Vec<usize>,
    pub label_sums: Vec<f64>,
    pub label_sq_sums: Vec<f64>,
}

impl Batch {
    /// One entry per sample.
    pub fn from_samples(points: Vec<InputPoint>, labels: &[f64]) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::shape("points and labels have different lengths"));
        }
        Ok(Batch {
            counts: vec![1; points.len()],
            label_sums: labels.to_vec(),
            label_sq_sums: labels.iter().map(|y| y * y).collect(),
            points,
        })
    }

    pub fn grouped(points: Vec<InputPoint>, counts: Vec<usize>, label_sums: Vec<f64>, label_sq_sums: Vec<f64>) -> Result<Self> {
        let k = points.len();
        if counts.len() != k || label_sums.len() != k || label_sq_sums.len() != k {
            return Err(Error::shape("grouped batch fields have different lengths"));
        }
        Ok(Batch {
            points,
            counts,
            label_sums,
            label_sq_sums,
        })
    }

    /// Total sample size `n`.
    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_ungrouped(&self) -> bool {
        self.counts.iter().all(|&c| c == 1)
    }

    /// Labels of an ungrouped batch.
    pub fn labels(&self) -> Result<&[f64]> {
        if !self.is_ungrouped() {
            return Err(Error::shape("labels are only defined for ungrouped batches"));
        }
        Ok(&self.label_sums)
    }

    /// `½ n^{-1} Σ_j (f(x_j) - y_j)²` given `f` at the distinct points.
    pub fn risk(&self, values: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.points.len() {
            let v = values[a];
            s += self.counts[a] as f64 * v * v - 2.0 * v * self.label_sums[a] + self.label_sq_sums[a];
        }
        0.5 * s.max(0.0) / self.n() as f64
    }

    fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.points.is_empty() || self.n() == 0 {
            return Err(Error::Degenerate("empty training set".into()));
        }
        if self.points.iter().any(|p| p.dim() != cfg.dim) {
            return Err(Error::shape("training inputs do not match the network input dimension"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub alpha: f64,
    pub steps: usize,
    /// Keep `θ_t` whenever `t` is a multiple of the stride, and always at the
    /// last step. Zero keeps no snapshots.
    pub snapshot_stride: usize,
    pub blocks: ParamBlocks,
}

impl TrainOptions {
    pub fn new(alpha: f64, steps: usize) -> Self {
        TrainOptions {
            alpha,
            steps,
            snapshot_stride: 0,
            blocks: ParamBlocks::All,
        }
    }

    pub fn with_snapshots(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn with_blocks(mut self, blocks: ParamBlocks) -> Self {
        self.blocks = blocks;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub risk: f64,
    /// `‖θ_t - θ0‖_Θ`.
    pub distance: f64,
}

/// Trajectory of one gradient descent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Initialization seed, when the run started from [`init_symmetric`].
    pub seed: Option<u64>,
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<(usize, Theta)>,
    /// Number of steps at which the risk went up.
    pub risk_increases: usize,
    pub config_hash: Option<String>,
    pub wall_time_s: Option<f64>,
}

impl TrainRecord {
    pub fn max_distance(&self) -> f64 {
        self.steps.iter().fold(0.0, |a, s| a.max(s.distance))
    }

    pub fn final_risk(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.risk)
    }

    /// Parameters at every step `0..=T`, or an error if any is missing.
    pub fn dense_snapshots(&self) -> Result<Vec<Theta>> {
        let t = self.steps.len().saturating_sub(1);
        if self.snapshots.len() != t + 1 || self.snapshots.iter().enumerate().any(|(k, (s, _))| *s != k) {
            return Err(Error::MissingSnapshots(format!(
                "need snapshots at every step 0..={t}, have {}",
                self.snapshots.len()
            )));
        }
        Ok(self.snapshots.iter().map(|(_, th)| th.clone()).collect())
    }
}

/// Abort when the risk exceeds this multiple of the initial risk.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Gradient descent from the symmetric initialization drawn with `seed`.
pub fn gd_train(batch: &Batch, cfg: &NetworkConfig, opts: &TrainOptions, seed: u64) -> Result<(Theta, TrainRecord)> {
    let theta0 = init_symmetric(cfg, seed)?;
    let (theta, mut rec) = gd_train_from(batch, cfg, opts, &theta0)?;
    rec.seed = Some(seed);
    Ok((theta, rec))
}

/// `θ_{t+1} = θ_t - (α/n) Σ_j (g_{θt}(x_j) - y_j) P ∇g_{θt}(x_j)`, with `P`
/// the projection on the trained blocks.
pub fn gd_train_from(batch: &Batch, cfg: &NetworkConfig, opts: &TrainOptions, theta0: &Theta) -> Result<(Theta, TrainRecord)> {
    cfg.validate()?;
    theta0.check_config(cfg)?;
    batch.validate(cfg)?;
    if !(opts.alpha >= 0.0 && opts.alpha.is_finite()) {
        return Err(Error::config("train.alpha", "step size must be nonnegative"));
    }
    let p = cfg.param_len();
    let n = batch.n() as f64;
    let scale = opts.alpha / n;
    let mut theta = theta0.clone();
    let mut values = vec![0.0; batch.points.len()];
    let mut g = vec![0.0; p];
    let mut update = vec![0.0; p];
    let mut steps = Vec::with_capacity(opts.steps + 1);
    let mut snapshots = Vec::new();
    let mut risk_increases = 0;
    let mut initial_risk = f64::NAN;
    let mut last_risk = f64::NAN;
    let keep = |t: usize| opts.snapshot_stride > 0 && (t % opts.snapshot_stride == 0 || t == opts.steps);

    for t in 0..=opts.steps {
        let last = t == opts.steps;
        update.iter_mut().for_each(|u| *u = 0.0);
        for (a, x) in batch.points.iter().enumerate() {
            if last {
                values[a] = forward_raw(&theta, x.as_slice(), cfg);
                continue;
            }
            values[a] = grad_into(&theta, x.as_slice(), cfg, &mut g);
            let coef = batch.counts[a] as f64 * values[a] - batch.label_sums[a];
            for (u, gk) in update.iter_mut().zip(&g) {
                *u += coef * gk;
            }
        }
        let risk = batch.risk(&values);
        if !risk.is_finite() || !theta.is_finite() {
            return Err(Error::Divergence { step: t, last_risk });
        }
        if t == 0 {
            initial_risk = risk;
        } else {
            if risk > initial_risk * DIVERGENCE_FACTOR && initial_risk > 0.0 {
                return Err(Error::Divergence { step: t, last_risk });
            }
            if risk > last_risk {
                if risk_increases == 0 {
                    log::warn!("empirical risk increased at step {t} ({last_risk:e} -> {risk:e})");
                }
                risk_increases += 1;
            }
        }
        last_risk = risk;
        steps.push(StepRecord {
            step: t,
            risk,
            distance: crate::network::theta_distance(&theta, theta0)?,
        });
        if keep(t) {
            snapshots.push((t, theta.clone()));
        }
        if last {
            break;
        }
        let mut u = Theta::from_flat(cfg.width, cfg.dim, core::mem::take(&mut update))?;
        opts.blocks.mask(&mut u);
        for (th, uk) in theta.as_mut_slice().iter_mut().zip(u.as_slice()) {
            *th -= scale * uk;
        }
        update = u.into_vec();
    }
    Ok((
        theta,
        TrainRecord {
            seed: None,
            steps,
            snapshots,
            risk_increases,
            config_hash: None,
            wall_time_s: None,
        },
    ))
}

/// Weighted points on which population integrals `E[f(X) ∇g(X)]` are evaluated.
#[derive(Debug, Clone, Copy)]
pub struct PopulationGrid<'a> {
    pub points: &'a [InputPoint],
    /// Weights summing to one.
    pub weights: &'a [f64],
    /// `g_ρ` at the points.
    pub target: &'a [f64],
}

/// Norms of the terms of the weight decomposition at the last step, and the defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightIdentityReport {
    /// `‖θ_{T+1} - θ0 - α Σ_t (I - αĈ)^t z_{T-t}‖_Θ`.
    pub defect: f64,
    /// `‖θ_{T+1} - θ0‖_Θ`.
    pub displacement: f64,
    /// `‖ζ^{(k)}_T‖_Θ` for `k = 1..5`.
    pub zeta_norms: [f64; 5],
}

/// Checks the unrolled weight recursion
/// `θ_{T+1} - θ0 = α Σ_{t=0}^{T} (I - αĈ)^t (-ζ¹ - ζ² - ζ³ + ζ⁴ + ζ⁵)_{T-t}`,
/// where, with `Δ_t(x) = P(∇g_{θt}(x) - ∇g_{θ0}(x))`, `Ẑ* v = n^{-1} Σ_j v_j P∇g_{θ0}(x_j)`
/// and `Z*` its population counterpart on `grid`:
///
/// - `ζ¹_t = n^{-1} Σ_j (g_{θt}(x_j) - y_j) Δ_t(x_j) - ζ²_t`,
/// - `ζ²_t = E[(g_{θt}(X) - g_ρ(X)) Δ_t(X)]`,
/// - `ζ³_t = Ẑ*(r_t + g_{θ0})` with `r_t` the Taylor remainder at the sample,
/// - `ζ⁴ = Ẑ* y - Z* g_ρ`,
/// - `ζ⁵ = Z* g_ρ`,
///
/// and `Ĉ = n^{-1} Σ_j P∇g_{θ0}(x_j) ∇g_{θ0}(x_j)ᵀ P`. The record must hold
/// snapshots at every step up to `T + 1`.
pub fn weight_identity_check(
    record: &TrainRecord,
    batch: &Batch,
    grid: &PopulationGrid<'_>,
    cfg: &NetworkConfig,
    opts: &TrainOptions,
) -> Result<WeightIdentityReport> {
    let snaps = record.dense_snapshots()?;
    if snaps.len() < 2 {
        return Err(Error::MissingSnapshots("need at least two steps".into()));
    }
    if grid.weights.len() != grid.points.len() || grid.target.len() != grid.points.len() {
        return Err(Error::shape("population grid fields have different lengths"));
    }
    let p = cfg.param_len();
    if p > 4000 {
        return Err(Error::config("network.width", "tangent feature dimension exceeds 4000"));
    }
    batch.validate(cfg)?;
    let alpha = opts.alpha;
    let n = batch.n() as f64;
    let theta0 = &snaps[0];
    let big_t = snaps.len() - 2;
    let na = batch.points.len();

    let masked_grad = |th: &Theta, x: &InputPoint, out: &mut Theta| -> f64 {
        let v = grad_into(th, x.as_slice(), cfg, out.as_mut_slice());
        opts.blocks.mask(out);
        v
    };
    let mut buf = Theta::zeros_like(cfg);
    let mut feats0 = Vec::with_capacity(na);
    let mut g0 = Vec::with_capacity(na);
    for x in &batch.points {
        g0.push(masked_grad(theta0, x, &mut buf));
        feats0.push(buf.clone());
    }
    let mut grid0 = Vec::with_capacity(grid.points.len());
    for x in grid.points {
        masked_grad(theta0, x, &mut buf);
        grid0.push(buf.clone());
    }

    let mut c_hat = DMatrix::<f64>::zeros(p, p);
    for (a, f) in feats0.iter().enumerate() {
        let v = DVector::from_column_slice(f.as_slice());
        c_hat += (batch.counts[a] as f64 / n) * &v * v.transpose();
    }
    let propagator = DMatrix::<f64>::identity(p, p) - c_hat * alpha;

    let mut zeta4 = vec![0.0; p];
    let mut zeta5 = vec![0.0; p];
    for (a, f) in feats0.iter().enumerate() {
        axpy(&mut zeta4, batch.label_sums[a] / n, f.as_slice());
    }
    for (k, f) in grid0.iter().enumerate() {
        axpy(&mut zeta5, grid.weights[k] * grid.target[k], f.as_slice());
    }
    for (z4, z5) in zeta4.iter_mut().zip(&zeta5) {
        *z4 -= z5;
    }

    let mut acc = DVector::<f64>::zeros(p);
    let mut last = [vec![0.0; p], vec![0.0; p], vec![0.0; p]];
    for th in snaps.iter().take(big_t + 1) {
        let disp = th.sub(theta0)?;
        let mut sample = vec![0.0; p];
        let mut zeta2 = vec![0.0; p];
        let mut zeta3 = vec![0.0; p];
        for (a, x) in batch.points.iter().enumerate() {
            let v = masked_grad(th, x, &mut buf);
            let cnt = batch.counts[a] as f64;
            let coef = (cnt * v - batch.label_sums[a]) / n;
            let f0 = feats0[a].as_slice();
            for ((s, gk), g0k) in sample.iter_mut().zip(buf.as_slice()).zip(f0) {
                *s += coef * (gk - g0k);
            }
            let h = dot(f0, disp.as_slice());
            let remainder = v - g0[a] - h;
            axpy(&mut zeta3, cnt * (remainder + g0[a]) / n, f0);
        }
        for (k, x) in grid.points.iter().enumerate() {
            let v = masked_grad(th, x, &mut buf);
            let coef = grid.weights[k] * (v - grid.target[k]);
            let f0 = grid0[k].as_slice();
            for ((z, gk), g0k) in zeta2.iter_mut().zip(buf.as_slice()).zip(f0) {
                *z += coef * (gk - g0k);
            }
        }
        let zeta1: Vec<f64> = sample.iter().zip(&zeta2).map(|(s, z)| s - z).collect();
        let z = DVector::from_fn(p, |k, _| -zeta1[k] - zeta2[k] - zeta3[k] + zeta4[k] + zeta5[k]);
        acc = &propagator * acc + z * alpha;
        last = [zeta1, zeta2, zeta3];
    }
    let target = snaps[big_t + 1].sub(theta0)?;
    let defect = libm::sqrt(target.as_slice().iter().zip(acc.iter()).map(|(x, y)| (x - y) * (x - y)).sum());
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum());
    Ok(WeightIdentityReport {
        defect,
        displacement: target.norm(),
        zeta_norms: [norm(&last[0]), norm(&last[1]), norm(&last[2]), norm(&zeta4), norm(&zeta5)],
    })
}

fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk += s * xk;
    }
}
