//! Linearizations of training: kernel gradient descent, the tangent
//! predictor, and the coupling diagnostics between them and the network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::network::{dot, forward_raw, grad_into, InputPoint, NetworkConfig, ParamBlocks, Theta};

/// Representer coefficients of the kernel iterate `f_t = Σ_j c_j K(x_j, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgdState {
    pub step: usize,
    pub coefficients: Vec<f64>,
}

/// A kernel gradient descent run on `n` training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgdTrajectory {
    pub alpha: f64,
    /// Labels the iterate was fitted to.
    pub targets: Vec<f64>,
    pub states: Vec<KgdState>,
    /// `ŷ_t = K c^{(t)}` for every state.
    pub predictions: Vec<Vec<f64>>,
}

impl KgdTrajectory {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// `½ n^{-1} Σ_j (ŷ_t(x_j) - y_j)²`.
    pub fn risk(&self, t: usize) -> f64 {
        empirical_risk(&self.predictions[t], &self.targets)
    }
}

pub(crate) fn empirical_risk(pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    0.5 * pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n
}

fn check_alpha(alpha: f64, kappa_sq: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("step size must be nonnegative, got {alpha}")));
    }
    if alpha * kappa_sq >= 1.0 {
        log::warn!("step size {alpha} is not below 1/kappa^2 = {}", 1.0 / kappa_sq);
    }
    Ok(())
}

/// Runs `c ← c - (α/n)(K c - y)` from `c = 0` for `steps` iterations.
pub fn kgd_run(k: &KernelMatrix, y: &[f64], alpha: f64, steps: usize) -> Result<KgdTrajectory> {
    let n = k.n();
    if y.len() != n {
        return Err(Error::shape(format!("{} labels for a {n}x{n} kernel", y.len())));
    }
    check_alpha(alpha, k.kappa_sq)?;
    let scale = alpha / n as f64;
    let mut c = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut states = Vec::with_capacity(steps + 1);
    let mut predictions = Vec::with_capacity(steps + 1);
    states.push(KgdState {
        step: 0,
        coefficients: c.clone(),
    });
    predictions.push(pred.clone());
    let mut last_risk = empirical_risk(&pred, y);
    for t in 0..steps {
        for j in 0..n {
            c[j] -= scale * (pred[j] - y[j]);
        }
        pred = k.matvec(&c);
        if c.iter().chain(&pred).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t + 1, last_risk });
        }
        last_risk = empirical_risk(&pred, y);
        states.push(KgdState {
            step: t + 1,
            coefficients: c.clone(),
        });
        predictions.push(pred.clone());
    }
    Ok(KgdTrajectory {
        alpha,
        targets: y.to_vec(),
        states,
        predictions,
    })
}

/// Kernel gradient descent on a sample that repeats atoms. With `counts[a]`
/// copies of atom `a` and `label_sums[a]` the sum of their labels, the
/// aggregated coefficients `C_a = Σ_{j at a} c_j` follow
/// `C_a ← C_a - (α/n)(counts[a] f_t(x_a) - label_sums[a])`, which is exact.
///
/// Returns `f_t` at every atom for each requested checkpoint step.
pub fn kgd_grouped(
    k: &KernelMatrix,
    counts: &[usize],
    label_sums: &[f64],
    alpha: f64,
    checkpoints: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let na = k.n();
    if counts.len() != na || label_sums.len() != na {
        return Err(Error::shape("counts and label sums must have one entry per atom"));
    }
    check_alpha(alpha, k.kappa_sq)?;
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let scale = alpha / n as f64;
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut c = vec![0.0; na];
    let mut f = vec![0.0; na];
    let mut out = vec![Vec::new(); checkpoints.len()];
    let record = |t: usize, f: &Vec<f64>, out: &mut Vec<Vec<f64>>| {
        for (slot, &cp) in checkpoints.iter().enumerate() {
            if cp == t {
                out[slot] = f.clone();
            }
        }
    };
    record(0, &f, &mut out);
    for t in 0..last {
        for a in 0..na {
            c[a] -= scale * (counts[a] as f64 * f[a] - label_sums[a]);
        }
        f = k.matvec(&c);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t + 1,
                last_risk: f64::NAN,
            });
        }
        record(t + 1, &f, &mut out);
    }
    Ok(out)
}

/// `h_t(x) = ⟨∇g_{θ0}(x), θ_t - θ0⟩_Θ`.
pub fn tangent_predict(theta_t: &Theta, theta0: &Theta, x: &InputPoint, cfg: &NetworkConfig) -> Result<f64> {
    theta_t.check_config(cfg)?;
    theta0.check_config(cfg)?;
    if x.dim() != cfg.dim {
        return Err(Error::shape("input dimension differs from the network"));
    }
    let mut g = vec![0.0; cfg.param_len()];
    grad_into(theta0, x.as_slice(), cfg, &mut g);
    Ok(g.iter()
        .zip(theta_t.as_slice().iter().zip(theta0.as_slice()))
        .map(|(g, (t, t0))| g * (t - t0))
        .sum())
}

/// Row-major `n × (d+2)M` matrix of tangent features `P ∇g_{θ0}(x_i)`, with
/// the frozen blocks zeroed by `blocks`.
pub fn tangent_features(theta0: &Theta, cfg: &NetworkConfig, points: &[InputPoint], blocks: ParamBlocks) -> Result<Vec<f64>> {
    theta0.check_config(cfg)?;
    let p = cfg.param_len();
    let mut out = vec![0.0; points.len() * p];
    let mut g = Theta::zeros_like(cfg);
    for (i, x) in points.iter().enumerate() {
        if x.dim() != cfg.dim {
            return Err(Error::shape("input dimension differs from the network"));
        }
        grad_into(theta0, x.as_slice(), cfg, g.as_mut_slice());
        blocks.mask(&mut g);
        out[i * p..(i + 1) * p].copy_from_slice(g.as_slice());
    }
    Ok(out)
}

/// One row of the coupling report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub step: usize,
    /// `‖g_{θt} - g_{θ0} - h_t‖`.
    pub term_i: f64,
    /// `‖h_t - f_t‖`.
    pub term_ii: f64,
    /// `‖f_t - (g_ρ - g_{θ0})‖`.
    pub term_iii: f64,
    /// Sup-norm gap at the training points between `û_t` computed directly and by its recursion.
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub rows: Vec<CouplingRow>,
    /// `max_t ‖θ_t - θ0‖_Θ`.
    pub max_distance: f64,
    /// `max_t max_x |g_{θt}(x) - g_{θ0}(x) - h_t(x)|` over the evaluation points.
    pub term_i_sup: f64,
    /// `C(B̂)/√M · B̂²` with `B̂` the observed maximal distance.
    pub term_i_bound: f64,
}

impl CouplingReport {
    pub fn sup_term_i(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.term_i))
    }

    pub fn sup_term_ii(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.term_ii))
    }

    pub fn max_defect(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, r| a.max(r.defect))
    }
}

/// Everything the coupling diagnostics need about one training run.
#[derive(Debug, Clone, Copy)]
pub struct CouplingInputs<'a> {
    pub cfg: &'a NetworkConfig,
    pub blocks: ParamBlocks,
    /// `θ_0, θ_1, …, θ_T`.
    pub snapshots: &'a [Theta],
    /// Kernel iterate on the training points, fitted to `y - g_{θ0}`.
    pub kgd: &'a KgdTrajectory,
    /// Tangent kernel of the trained blocks at the training points.
    pub kernel: &'a KernelMatrix,
    pub train_points: &'a [InputPoint],
    pub train_labels: &'a [f64],
}

/// Held-out points carrying the norm used for terms I to III.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub points: &'a [InputPoint],
    /// Weights summing to one.
    pub weights: &'a [f64],
    /// `g_ρ` at the points.
    pub target: &'a [f64],
}

struct Checked {
    n: usize,
    p: usize,
    g0_train: Vec<f64>,
    feats0: Vec<f64>,
}

fn check_inputs(inp: &CouplingInputs<'_>) -> Result<Checked> {
    let n = inp.train_points.len();
    if inp.snapshots.is_empty() {
        return Err(Error::MissingSnapshots("no parameter snapshots".into()));
    }
    if inp.snapshots.len() != inp.kgd.states.len() {
        return Err(Error::shape(format!(
            "trajectory lengths differ: {} parameter snapshots vs {} kernel iterates",
            inp.snapshots.len(),
            inp.kgd.states.len()
        )));
    }
    if inp.train_labels.len() != n || inp.kernel.n() != n || inp.kgd.targets.len() != n {
        return Err(Error::shape("training points, labels, kernel and kernel iterate sizes differ"));
    }
    let theta0 = &inp.snapshots[0];
    for s in inp.snapshots {
        s.check_config(inp.cfg)?;
    }
    let g0_train: Vec<f64> = inp.train_points.iter().map(|x| forward_raw(theta0, x.as_slice(), inp.cfg)).collect();
    for j in 0..n {
        let want = inp.train_labels[j] - g0_train[j];
        if (inp.kgd.targets[j] - want).abs() > 1e-12 * (1.0 + want.abs()) {
            return Err(Error::Degenerate(format!(
                "kernel iterate was not fitted to y - g(θ0) at training point {j}"
            )));
        }
    }
    let feats0 = tangent_features(theta0, inp.cfg, inp.train_points, inp.blocks)?;
    Ok(Checked {
        n,
        p: inp.cfg.param_len(),
        g0_train,
        feats0,
    })
}

/// Sup-norm defect per step between `û_t = h_t - f_t` at the training points
/// computed directly and by the recursion
/// `û_{t+1} = û_t - (α/n) K û_t - α ξ¹_t - α ξ²_t` started from the direct `û_0`, where
/// `ξ¹_t(x_i) = n^{-1} Σ_j (g_{θt}(x_j) - y_j) ⟨P∇g_{θ0}(x_i), P(∇g_{θt}(x_j) - ∇g_{θ0}(x_j))⟩`
/// and `ξ²_t = n^{-1} K r_t` with `r_t` the Taylor remainder at the training points.
/// Also returns `û_t` itself.
pub fn recursion_defects(inp: &CouplingInputs<'_>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let ck = check_inputs(inp)?;
    defects_checked(inp, &ck)
}

fn defects_checked(inp: &CouplingInputs<'_>, ck: &Checked) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (n, p) = (ck.n, ck.p);
    let cfg = inp.cfg;
    let theta0 = &inp.snapshots[0];
    let alpha = inp.kgd.alpha;
    let nf = n as f64;

    let mut direct = Vec::with_capacity(inp.snapshots.len());
    let mut forwards = Vec::with_capacity(inp.snapshots.len());
    for (t, th) in inp.snapshots.iter().enumerate() {
        let disp = th.sub(theta0)?;
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        for i in 0..n {
            let h = dot(&ck.feats0[i * p..(i + 1) * p], disp.as_slice());
            u[i] = h - inp.kgd.predictions[t][i];
            g[i] = forward_raw(th, inp.train_points[i].as_slice(), cfg);
        }
        direct.push(u);
        forwards.push(g);
    }

    let mut defects = vec![0.0; inp.snapshots.len()];
    let mut rec = direct[0].clone();
    let mut buf = Theta::zeros_like(cfg);
    for t in 0..inp.snapshots.len() - 1 {
        let th = &inp.snapshots[t];
        let disp = th.sub(theta0)?;
        let mut xi1 = vec![0.0; n];
        // w = Σ_j res_j P(∇g_t(x_j) - ∇g_0(x_j)); ξ¹_i = ⟨P∇g_0(x_i), w⟩ / n.
        let mut w = vec![0.0; p];
        let mut remainder = vec![0.0; n];
        for j in 0..n {
            let res = forwards[t][j] - inp.train_labels[j];
            grad_into(th, inp.train_points[j].as_slice(), cfg, buf.as_mut_slice());
            inp.blocks.mask(&mut buf);
            let f0 = &ck.feats0[j * p..(j + 1) * p];
            for ((wk, gk), g0k) in w.iter_mut().zip(buf.as_slice()).zip(f0) {
                *wk += res * (gk - g0k);
            }
            let h = dot(f0, disp.as_slice());
            remainder[j] = forwards[t][j] - ck.g0_train[j] - h;
        }
        for (i, x) in xi1.iter_mut().enumerate() {
            *x = dot(&ck.feats0[i * p..(i + 1) * p], &w) / nf;
        }
        let ku = inp.kernel.matvec(&rec);
        let kr = inp.kernel.matvec(&remainder);
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] = rec[i] - alpha / nf * ku[i] - alpha * xi1[i] - alpha * kr[i] / nf;
        }
        rec = next;
        defects[t + 1] = rec
            .iter()
            .zip(&direct[t + 1])
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    }
    Ok((defects, direct))
}

/// Largest recursion defect over all steps.
pub fn coupling_recursion_check(inp: &CouplingInputs<'_>) -> Result<f64> {
    let (defects, _) = recursion_defects(inp)?;
    Ok(defects.iter().fold(0.0, |a, &v| a.max(v)))
}

fn weighted_norm(w: &[f64], v: &[f64]) -> f64 {
    libm::sqrt(w.iter().zip(v).map(|(w, v)| w * v * v).sum())
}

/// Terms I to III of the error decomposition at every step, measured in the
/// weighted norm of `eval`, with the recursion defect alongside.
pub fn coupling_residual(inp: &CouplingInputs<'_>, eval: &EvalSet<'_>) -> Result<CouplingReport> {
    let ne = eval.points.len();
    if eval.weights.len() != ne || eval.target.len() != ne {
        return Err(Error::shape("evaluation points, weights and target sizes differ"));
    }
    let ck = check_inputs(inp)?;
    let (defects, _) = defects_checked(inp, &ck)?;
    let (n, p) = (ck.n, ck.p);
    let cfg = inp.cfg;
    let theta0 = &inp.snapshots[0];
    let feats_eval = tangent_features(theta0, cfg, eval.points, ParamBlocks::All)?;
    let masked_eval = match inp.blocks {
        ParamBlocks::All => feats_eval.clone(),
        b => tangent_features(theta0, cfg, eval.points, b)?,
    };
    let g0_eval: Vec<f64> = eval.points.iter().map(|x| forward_raw(theta0, x.as_slice(), cfg)).collect();

    let mut rows = Vec::with_capacity(inp.snapshots.len());
    let mut max_distance = 0.0f64;
    let mut term_i_sup = 0.0f64;
    let mut e1 = vec![0.0; ne];
    let mut e2 = vec![0.0; ne];
    let mut e3 = vec![0.0; ne];
    for (t, th) in inp.snapshots.iter().enumerate() {
        let disp = th.sub(theta0)?;
        max_distance = max_distance.max(disp.norm());
        // f_t(x) = ⟨P∇g_0(x), Σ_j c_j P∇g_0(x_j)⟩.
        let mut wf = vec![0.0; p];
        for (j, cj) in inp.kgd.states[t].coefficients.iter().enumerate().take(n) {
            for (wk, fk) in wf.iter_mut().zip(&ck.feats0[j * p..(j + 1) * p]) {
                *wk += cj * fk;
            }
        }
        for e in 0..ne {
            let h = dot(&feats_eval[e * p..(e + 1) * p], disp.as_slice());
            let f = dot(&masked_eval[e * p..(e + 1) * p], &wf);
            let g = forward_raw(th, eval.points[e].as_slice(), cfg);
            e1[e] = g - g0_eval[e] - h;
            e2[e] = h - f;
            e3[e] = f - (eval.target[e] - g0_eval[e]);
            term_i_sup = term_i_sup.max(e1[e].abs());
        }
        rows.push(CouplingRow {
            step: t,
            term_i: weighted_norm(eval.weights, &e1),
            term_ii: weighted_norm(eval.weights, &e2),
            term_iii: weighted_norm(eval.weights, &e3),
            defect: defects[t],
        });
    }
    let bound = crate::network::lipschitz_constant(cfg, max_distance) / libm::sqrt(cfg.width as f64) * max_distance * max_distance;
    Ok(CouplingReport {
        rows,
        max_distance,
        term_i_sup,
        term_i_bound: bound,
    })
}
