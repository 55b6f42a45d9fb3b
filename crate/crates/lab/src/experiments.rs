//! Sweeps and single runs behind the subcommands.

use log::{info, warn};
use ntk_core::bounds::{neuron_threshold, rate_curve, stopping_time, weight_envelope, weight_width};
use ntk_core::data::{excess_risk, generate_dataset, Dataset, NoiseSpec};
use ntk_core::fit::{loglog_fit, median};
use ntk_core::kernels::{feature_gram, gram_empirical, KernelKind, KernelMatrix, LimitKernel};
use ntk_core::network::{forward, init_symmetric, NetworkConfig, ParamBlocks};
use ntk_core::rng::derive_seed;
use ntk_core::spectrum::{sample_atoms, synthesize_target, SourceTarget, SpectralModel};
use ntk_core::tangent::{coupling_residual, kgd_grouped, kgd_run, tangent_features, CouplingInputs, EvalSet};
use ntk_core::trainer::{gd_train, Batch, TrainOptions};
use ntk_core::Error;
use rayon::prelude::*;

use crate::config::{Config, RateMode, SpectrumSource};
use crate::error::LabError;
use crate::io::{coupling_table, train_table, Cell, Table};
use crate::report::{now_unix, Artifact, RunReport};

/// Seed tags, one per purpose.
pub const TAG_ATOMS: u64 = 1;
pub const TAG_TARGET: u64 = 2;
pub const TAG_DATA: u64 = 3;
pub const TAG_INIT: u64 = 4;
pub const TAG_POINTS: u64 = 5;
pub const TAG_MONITOR: u64 = 6;

/// Reps per cell are indexed `cell * REP_STRIDE + rep` when deriving seeds.
const REP_STRIDE: u64 = 1 << 20;

const AGGREGATE_NOTE: &str =
    "gates use medians over seeds as a surrogate for the single-draw high-probability statements";

/// Evaluates `f(0..count)` in order, on a pool of `threads` workers when more than one.
pub fn run_indexed<T, F>(threads: usize, count: usize, f: F) -> Result<Vec<T>, LabError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::Config {
            key: "threads".into(),
            reason: e.to_string(),
        })?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

fn seed_for(cfg: &Config, tag: u64, cell: usize, rep: usize) -> u64 {
    derive_seed(cfg.seed, tag, cell as u64 * REP_STRIDE + rep as u64)
}

fn noise_spec(cfg: &Config) -> NoiseSpec {
    if cfg.data.noise > 0.0 {
        NoiseSpec::Uniform {
            half_width: cfg.data.noise,
        }
    } else {
        NoiseSpec::None
    }
}

fn even_clamp(x: f64, lo: usize, hi: usize) -> usize {
    let w = if x.is_finite() { x.ceil().min(hi as f64) as usize } else { hi };
    let hi = hi.max(2);
    let w = w.clamp(lo.clamp(2, hi), hi);
    w + (w % 2)
}

fn finite_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        median(values)
    }
}

/// The spectral surrogate with its Gram matrix at the atoms and eigen-decay estimate.
pub struct Surrogate {
    pub model: SpectralModel,
    pub gram: KernelMatrix,
    pub b_hat: f64,
}

/// Builds the surrogate described by the `spectrum` section.
pub fn build_surrogate(cfg: &Config, net: &NetworkConfig) -> Result<Surrogate, LabError> {
    let sp = &cfg.spectrum;
    let seed = sp.seed.unwrap_or_else(|| derive_seed(cfg.seed, TAG_ATOMS, 0));
    let model = match sp.source {
        SpectrumSource::PowerLaw => {
            if net.dim != 2 {
                return Err(LabError::Config {
                    key: "spectrum.source".into(),
                    reason: "the power-law surrogate lives on the circle and needs network.dim = 2".into(),
                });
            }
            SpectralModel::power_law_circle(sp.grid_size, sp.decay, sp.scale)?
        }
        SpectrumSource::Ntk => {
            info!("building limit-kernel surrogate on {} atoms", sp.grid_size);
            let atoms = sample_atoms(sp.measure, sp.grid_size, net.dim, seed)?;
            let limit = LimitKernel::new(net, cfg.kernel.quadrature)?;
            let mut g = limit.gram(&atoms)?;
            if cfg.kernel.psd_repair {
                g.repair_psd()?;
            }
            let weights = vec![1.0 / atoms.len() as f64; atoms.len()];
            SpectralModel::from_gram(atoms, weights, &g, seed)?
        }
    };
    let gram = model.gram_at_atoms();
    let b_hat = model.fit_decay_exponent(sp.fit_range)?.b_hat;
    Ok(Surrogate { model, gram, b_hat })
}

fn build_target(cfg: &Config, model: &SpectralModel) -> Result<SourceTarget, LabError> {
    Ok(synthesize_target(
        model,
        cfg.target.r,
        cfg.target.radius,
        derive_seed(cfg.seed, TAG_TARGET, 0),
    )?)
}

fn dataset(cfg: &Config, sur: &Surrogate, target: &SourceTarget, n: usize, noise: NoiseSpec, seed: u64) -> Result<Dataset, LabError> {
    Ok(generate_dataset(&sur.model, target, n, noise, cfg.data.c_y, seed)?)
}

fn predict_atoms(theta: &ntk_core::Theta, model: &SpectralModel, net: &NetworkConfig) -> Result<Vec<f64>, LabError> {
    model
        .atoms
        .iter()
        .map(|x| forward(theta, x, net).map_err(LabError::from))
        .collect()
}

fn is_divergence(e: &LabError) -> bool {
    matches!(e, LabError::Core(Error::Divergence { .. }))
}

/// `kernel`: empirical and limit Gram matrices on a sample of points.
pub fn kernel_run(cfg: &Config) -> Result<RunReport, LabError> {
    let net = cfg.network.build()?;
    let point_seed = derive_seed(cfg.seed, TAG_POINTS, 0);
    let init_seed = derive_seed(cfg.seed, TAG_INIT, 0);
    let points = sample_atoms(cfg.spectrum.measure, cfg.kernel.points, net.dim, point_seed)?;
    let theta0 = init_symmetric(&net, init_seed)?;
    let emp = gram_empirical(&points, &theta0, &net)?;
    let mut lim = LimitKernel::new(&net, cfg.kernel.quadrature)?.gram(&points)?;
    let min_before = lim.min_eigenvalue()?;
    let repaired = if cfg.kernel.psd_repair { Some(lim.repair_psd()?) } else { None };

    let mut table = Table::new(&["i", "j", "empirical", "limit", "abs_diff"]);
    let mut max_diff: f64 = 0.0;
    for i in 0..points.len() {
        for j in i..points.len() {
            let (e, l) = (emp.get(i, j), lim.get(i, j));
            max_diff = max_diff.max((e - l).abs());
            table.push(vec![i.into(), j.into(), e.into(), l.into(), (e - l).abs().into()]);
        }
    }
    let mut rep = RunReport::new("kernel", cfg, table);
    rep.headline = Some("max_abs_diff".into());
    rep.seed("points", 0, 0, point_seed);
    rep.seed("init", 0, 0, init_seed);
    rep.metric("max_abs_diff", max_diff);
    rep.metric("limit_min_eigenvalue_before_repair", min_before);
    rep.metric("empirical_min_eigenvalue", emp.min_eigenvalue()?);
    if let Some(r) = repaired {
        rep.metric("repair_max_change", r.max_change);
        rep.metric("repair_changed", if r.changed { 1.0 } else { 0.0 });
    }
    rep.artifacts.push(Artifact::Kernel {
        name: "kernel_empirical".into(),
        matrix: emp,
        seed: init_seed,
    });
    rep.artifacts.push(Artifact::Kernel {
        name: "kernel_limit".into(),
        matrix: lim,
        seed: point_seed,
    });
    rep.finished_unix_s = now_unix();
    Ok(rep)
}

/// `spectrum`: the surrogate eigenvalues, decay fits and a source target.
pub fn spectrum_run(cfg: &Config) -> Result<RunReport, LabError> {
    let net = cfg.network.build()?;
    let sur = build_surrogate(cfg, &net)?;
    let target = build_target(cfg, &sur.model)?;
    let mut table = Table::new(&["j", "eigenvalue", "effective_dimension"]);
    for (j, &mu) in sur.model.eigenvalues.iter().enumerate() {
        let nl = if mu > 0.0 { sur.model.effective_dimension(mu)? } else { f64::NAN };
        table.push(vec![(j + 1).into(), mu.into(), nl.into()]);
    }
    let mut rep = RunReport::new("spectrum", cfg, table);
    rep.headline = Some("b_hat_eigenvalues".into());
    rep.seed("atoms", 0, 0, sur.model.seed);
    rep.seed("target", 0, 0, target.seed);
    let decay = sur.model.fit_decay_exponent(cfg.spectrum.fit_range)?;
    let effdim = sur.model.fit_effdim_exponent(cfg.spectrum.fit_range)?;
    rep.slope("eigenvalue_decay", &decay.fit, None);
    rep.slope("effective_dimension", &effdim.fit, Some(-decay.b_hat));
    rep.metric("b_hat_eigenvalues", decay.b_hat);
    rep.metric("b_hat_effective_dimension", effdim.b_hat);
    rep.metric("fit_j_lo", decay.j_lo as f64);
    rep.metric("fit_j_hi", decay.j_hi as f64);
    rep.metric("orthonormality_defect", sur.model.orthonormality_defect());
    rep.metric("target_rkhs_norm_sq", target.rkhs_norm_sq(&sur.model));
    rep.metric("target_max_abs", target.max_abs());
    rep.artifacts.push(Artifact::Model {
        name: "spectral_model".into(),
        model: Box::new(sur.model),
    });
    rep.artifacts.push(Artifact::Target {
        name: "target".into(),
        target,
    });
    rep.finished_unix_s = now_unix();
    Ok(rep)
}

/// `train`: one gradient descent run on a sample from the surrogate.
pub fn train_run(cfg: &Config) -> Result<RunReport, LabError> {
    let net = cfg.network.build()?;
    let sur = build_surrogate(cfg, &net)?;
    let target = build_target(cfg, &sur.model)?;
    let data_seed = seed_for(cfg, TAG_DATA, 0, 0);
    let init_seed = seed_for(cfg, TAG_INIT, 0, 0);
    let ds = dataset(cfg, &sur, &target, cfg.data.n, noise_spec(cfg), data_seed)?;
    let (batch, _) = ds.grouped_batch(&sur.model)?;
    let opts = TrainOptions::new(cfg.train.alpha, cfg.train.steps)
        .with_snapshots(cfg.train.snapshot_stride)
        .with_blocks(cfg.train.blocks);
    let (theta, mut record) = gd_train(&batch, &net, &opts, init_seed)?;
    record.config_hash = Some(cfg.hash());
    let pred = predict_atoms(&theta, &sur.model, &net)?;
    let mut rep = RunReport::new("train", cfg, train_table(&record));
    rep.headline = Some("excess_risk".into());
    rep.seed("atoms", 0, 0, sur.model.seed);
    rep.seed("target", 0, 0, target.seed);
    rep.seed("data", 0, 0, data_seed);
    rep.seed("init", 0, 0, init_seed);
    rep.metric("excess_risk", excess_risk(&pred, &target, &sur.model)?);
    rep.metric("final_empirical_risk", record.final_risk());
    rep.metric("max_distance", record.max_distance());
    rep.metric("risk_increases", record.risk_increases as f64);
    if !record.snapshots.is_empty() {
        rep.artifacts.push(Artifact::Snapshots {
            name: "snapshots".into(),
            snapshots: record.snapshots,
        });
    }
    rep.finished_unix_s = now_unix();
    Ok(rep)
}

struct RateCell {
    kernel: Option<f64>,
    network: Option<f64>,
    kernel_failed: bool,
    network_failed: bool,
}

/// `rates`: excess risk at the stopping time against the sample size.
pub fn rate_sweep(cfg: &Config) -> Result<RunReport, LabError> {
    let rc = &cfg.rates;
    let net = cfg.network.build()?;
    let r = cfg.target.r;
    let mut table = Table::new(&[
        "n",
        "T",
        "width",
        "kernel_ok",
        "kernel_failed",
        "median_kernel_risk",
        "network_ok",
        "network_failed",
        "median_network_risk",
        "envelope",
        "early_stop_ratio",
    ]);
    if rc.n_grid.is_empty() {
        let mut rep = RunReport::new("rates", cfg, table);
        rep.finished_unix_s = now_unix();
        return Ok(rep);
    }
    if rc.n_grid.len() < 4 {
        return Err(LabError::Config {
            key: "rates.n_grid".into(),
            reason: format!("need at least 4 sample sizes, got {}", rc.n_grid.len()),
        });
    }
    let sur = build_surrogate(cfg, &net)?;
    let b = rc.b.unwrap_or(sur.b_hat);
    if 2.0 * r + b <= 1.0 {
        return Err(LabError::Config {
            key: "target.r".into(),
            reason: format!("2r + b must exceed 1, got 2·{r} + {b}"),
        });
    }
    let target = build_target(cfg, &sur.model)?;
    let envelope = rate_curve(&rc.n_grid, r, b, cfg.bounds.constant)?;
    let run_kernel = matches!(rc.mode, RateMode::Kernel | RateMode::Both);
    let run_network = matches!(rc.mode, RateMode::Network | RateMode::Both);
    let alpha = cfg.train.alpha;
    let noise = noise_spec(cfg);

    let mut plan = Vec::new();
    for &n in &rc.n_grid {
        let t = stopping_time(n, r, b)?;
        let m = neuron_threshold(n, r, b, net.dim, cfg.bounds.delta, cfg.bounds.constant)?;
        plan.push((n, t, even_clamp(rc.width_scale * m, rc.min_width, rc.max_width)));
    }
    let reps = rc.reps;
    let results = run_indexed(cfg.threads, plan.len() * reps, |k| -> Result<RateCell, LabError> {
        let (cell, rep) = (k / reps, k % reps);
        let (n, t, width) = plan[cell];
        let ds = dataset(cfg, &sur, &target, n, noise, seed_for(cfg, TAG_DATA, cell, rep))?;
        let mut out = RateCell {
            kernel: None,
            network: None,
            kernel_failed: false,
            network_failed: false,
        };
        if run_kernel {
            let (counts, sums, _) = ds.atom_totals(sur.model.len());
            match kgd_grouped(&sur.gram, &counts, &sums, alpha, &[t]) {
                Ok(f) => out.kernel = Some(excess_risk(&f[0], &target, &sur.model)?),
                Err(Error::Divergence { step, .. }) => {
                    warn!("kernel GD diverged at step {step} (n = {n}, rep {rep})");
                    out.kernel_failed = true;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if run_network {
            let wnet = net.with_width(width)?;
            let (batch, _) = ds.grouped_batch(&sur.model)?;
            let opts = TrainOptions::new(alpha, t).with_blocks(cfg.train.blocks);
            match gd_train(&batch, &wnet, &opts, seed_for(cfg, TAG_INIT, cell, rep)) {
                Ok((theta, _)) => {
                    let pred = predict_atoms(&theta, &sur.model, &wnet)?;
                    out.network = Some(excess_risk(&pred, &target, &sur.model)?);
                }
                Err(Error::Divergence { step, .. }) => {
                    warn!("network GD diverged at step {step} (n = {n}, rep {rep})");
                    out.network_failed = true;
                }
                Err(e) => return Err(e.into()),
            }
        }
        info!("rates: n = {n} rep {rep} done");
        Ok(out)
    })?;
    let monitors = run_indexed(cfg.threads, plan.len(), |cell| -> Result<f64, LabError> {
        let (n, t, _) = plan[cell];
        let ds = dataset(cfg, &sur, &target, n, NoiseSpec::None, derive_seed(cfg.seed, TAG_MONITOR, cell as u64))?;
        let (counts, sums, _) = ds.atom_totals(sur.model.len());
        match kgd_grouped(&sur.gram, &counts, &sums, alpha, &[t, 4 * t]) {
            Ok(f) => Ok(excess_risk(&f[0], &target, &sur.model)? / excess_risk(&f[1], &target, &sur.model)?),
            Err(Error::Divergence { .. }) => Ok(f64::NAN),
            Err(e) => Err(e.into()),
        }
    })?;

    let mut medians_k = Vec::new();
    let mut medians_n = Vec::new();
    let mut cells = Vec::new();
    let mut failures = 0usize;
    for (cell, &(n, t, width)) in plan.iter().enumerate() {
        let chunk = &results[cell * reps..(cell + 1) * reps];
        let mut ks = Vec::new();
        let mut ns = Vec::new();
        let (mut kf, mut nf) = (0usize, 0usize);
        for c in chunk {
            let c = c.as_ref().map_err(clone_err)?;
            ks.extend(c.kernel);
            ns.extend(c.network);
            kf += c.kernel_failed as usize;
            nf += c.network_failed as usize;
        }
        failures += kf + nf;
        let mk = finite_or_nan(&ks);
        let mn = finite_or_nan(&ns);
        if kf == 0 && !ks.is_empty() {
            medians_k.push((n as f64, mk));
        }
        if nf == 0 && !ns.is_empty() {
            medians_n.push((n as f64, mn));
        }
        cells.push(vec![
            n.into(),
            t.into(),
            width.into(),
            ks.len().into(),
            kf.into(),
            mk.into(),
            ns.len().into(),
            nf.into(),
            mn.into(),
            envelope[cell].1.into(),
            (*monitors[cell].as_ref().map_err(clone_err)?).into(),
        ]);
    }
    for row in cells {
        table.push(row);
    }
    let mut rep = RunReport::new("rates", cfg, table);
    rep.notes.push(AGGREGATE_NOTE.into());
    rep.headline = Some(if run_kernel { "kernel" } else { "network" }.into());
    let reference = -r / (2.0 * r + b);
    if run_kernel {
        fit_slope(&mut rep, "kernel", &medians_k, Some(reference))?;
    }
    if run_network {
        fit_slope(&mut rep, "network", &medians_n, Some(reference))?;
    }
    rep.metric("b", b);
    rep.metric("b_hat", sur.b_hat);
    rep.metric("r", r);
    rep.metric("reference_slope", reference);
    rep.metric("diverged_runs", failures as f64);
    let worst = monitors.iter().filter_map(|m| m.as_ref().ok()).fold(0.0f64, |a, &m| a.max(m));
    rep.metric("max_early_stop_ratio", worst);
    if worst > 2.0 {
        rep.notes.push(format!("early-stopping monitor: risk(T)/risk(4T) reached {worst:.3} > 2"));
    }
    rep.seed("atoms", 0, 0, sur.model.seed);
    rep.seed("target", 0, 0, target.seed);
    for cell in 0..plan.len() {
        rep.seed("monitor", cell, 0, derive_seed(cfg.seed, TAG_MONITOR, cell as u64));
        for r in 0..reps {
            rep.seed("data", cell, r, seed_for(cfg, TAG_DATA, cell, r));
            if run_network {
                rep.seed("init", cell, r, seed_for(cfg, TAG_INIT, cell, r));
            }
        }
    }
    rep.finished_unix_s = now_unix();
    Ok(rep)
}

/// Fits a log-log slope when at least 4 points are positive; otherwise notes why not.
fn fit_slope(rep: &mut RunReport, key: &str, pts: &[(f64, f64)], reference: Option<f64>) -> Result<(), LabError> {
    let usable: Vec<(f64, f64)> = pts.iter().copied().filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite()).collect();
    if usable.len() < 4 {
        rep.notes.push(format!("{key}: {} usable cells, no slope fitted", usable.len()));
        return Ok(());
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    rep.slope(key, &loglog_fit(&xs, &ys)?, reference);
    Ok(())
}

fn clone_err(e: &LabError) -> LabError {
    match e {
        LabError::Config { key, reason } => LabError::Config {
            key: key.clone(),
            reason: reason.clone(),
        },
        LabError::Core(c) => LabError::Core(c.clone()),
        other => LabError::Format {
            path: Default::default(),
            reason: other.to_string(),
        },
    }
}

/// Coupling terms of one training run.
#[derive(Debug, Clone, Copy)]
pub struct CouplingRun {
    pub sup_term_i: f64,
    pub sup_term_ii: f64,
    pub final_term_iii: f64,
    pub max_distance: f64,
    pub term_i_bound: f64,
    pub max_defect: f64,
}

/// `coupling`: error-decomposition terms against the width.
pub fn coupling_sweep(cfg: &Config) -> Result<RunReport, LabError> {
    let cc = &cfg.coupling;
    let net = cfg.network.build()?;
    let mut table = Table::new(&[
        "width",
        "blocks",
        "runs",
        "failed",
        "median_sup_term_I",
        "median_sup_term_II",
        "median_final_term_III",
        "median_max_distance",
        "median_term_I_bound",
        "max_recursion_defect",
    ]);
    if cc.widths.is_empty() {
        let mut rep = RunReport::new("coupling", cfg, table);
        rep.finished_unix_s = now_unix();
        return Ok(rep);
    }
    if cc.widths.len() < 4 || cc.widths.iter().any(|&m| m == 0 || m % 2 == 1) {
        return Err(LabError::Config {
            key: "coupling.widths".into(),
            reason: "need at least 4 even positive widths".into(),
        });
    }
    let sur = build_surrogate(cfg, &net)?;
    let target = build_target(cfg, &sur.model)?;
    let ne = cc.eval_points.min(sur.model.len()).max(1);
    let eval_points = &sur.model.atoms[..ne];
    let eval_weights = vec![1.0 / ne as f64; ne];
    let eval_target = &target.g_values[..ne];
    let eval = EvalSet {
        points: eval_points,
        weights: &eval_weights,
        target: eval_target,
    };
    let mut blocks = vec![ParamBlocks::All];
    if cc.outer_control {
        blocks.push(ParamBlocks::OuterLayer);
    }
    let noise = noise_spec(cfg);
    let seeds = cc.seeds;
    let per_width = blocks.len() * seeds;
    let mut trace = None;
    let results = run_indexed(cfg.threads, cc.widths.len() * per_width, |k| {
        let (wi, rest) = (k / per_width, k % per_width);
        let (bi, s) = (rest / seeds, rest % seeds);
        let want_trace = k == 0;
        coupling_one(cfg, &net, &sur, &target, &eval, cc.widths[wi], blocks[bi], noise, s, want_trace)
    })?;
    let mut rows = Vec::new();
    let mut term_i_all = Vec::new();
    let mut term_ii_all = Vec::new();
    let mut outer_max: f64 = 0.0;
    let mut failures = 0usize;
    for (wi, &m) in cc.widths.iter().enumerate() {
        for (bi, &bl) in blocks.iter().enumerate() {
            let mut runs = Vec::new();
            let mut failed = 0usize;
            for s in 0..seeds {
                match &results[wi * per_width + bi * seeds + s] {
                    Ok((run, tr)) => {
                        runs.push(*run);
                        if let Some(t) = tr {
                            trace = Some(t.clone());
                        }
                    }
                    Err(e) if is_divergence(e) => failed += 1,
                    Err(e) => return Err(clone_err(e)),
                }
            }
            failures += failed;
            let med = |f: fn(&CouplingRun) -> f64| finite_or_nan(&runs.iter().map(f).collect::<Vec<_>>());
            let t1 = med(|r| r.sup_term_i);
            let t2 = med(|r| r.sup_term_ii);
            let defect = runs.iter().fold(0.0f64, |a, r| a.max(r.max_defect));
            match bl {
                ParamBlocks::All if failed == 0 && !runs.is_empty() => {
                    term_i_all.push((m as f64, t1));
                    term_ii_all.push((m as f64, t2));
                }
                ParamBlocks::OuterLayer => {
                    outer_max = runs.iter().fold(outer_max, |a, r| a.max(r.sup_term_i));
                }
                _ => {}
            }
            rows.push(vec![
                m.into(),
                blocks_id(bl).into(),
                runs.len().into(),
                failed.into(),
                t1.into(),
                t2.into(),
                med(|r| r.final_term_iii).into(),
                med(|r| r.max_distance).into(),
                med(|r| r.term_i_bound).into(),
                defect.into(),
            ]);
        }
    }
    for row in rows {
        table.push(row);
    }
    let mut rep = RunReport::new("coupling", cfg, table);
    rep.notes.push(AGGREGATE_NOTE.into());
    rep.headline = Some("term_I".into());
    fit_slope(&mut rep, "term_I", &term_i_all, Some(-0.5))?;
    fit_slope(&mut rep, "term_II", &term_ii_all, None)?;
    if term_ii_all.len() >= 2 {
        let nonincreasing = term_ii_all.windows(2).all(|w| w[1].1 <= w[0].1);
        rep.metric("term_II_nonincreasing", if nonincreasing { 1.0 } else { 0.0 });
    }
    if cc.outer_control {
        rep.metric("outer_control_max_term_I", outer_max);
    }
    rep.metric("diverged_runs", failures as f64);
    if let Some(t) = trace {
        rep.extra_tables.push(("trace".into(), t));
    }
    rep.seed("atoms", 0, 0, sur.model.seed);
    rep.seed("target", 0, 0, target.seed);
    for s in 0..seeds {
        rep.seed("data", 0, s, seed_for(cfg, TAG_DATA, 0, s));
        rep.seed("init", 0, s, seed_for(cfg, TAG_INIT, 0, s));
    }
    rep.finished_unix_s = now_unix();
    Ok(rep)
}

fn blocks_id(b: ParamBlocks) -> &'static str {
    match b {
        ParamBlocks::All => "all",
        ParamBlocks::OuterLayer => "outer",
    }
}

/// One coupling run at `width` with seed index `s`. The sample and the
/// initialization stream are shared across widths, so wider networks extend
/// narrower ones column by column.
#[allow(clippy::too_many_arguments)]
pub fn coupling_one(
    cfg: &Config,
    net: &NetworkConfig,
    sur: &Surrogate,
    target: &SourceTarget,
    eval: &EvalSet<'_>,
    width: usize,
    blocks: ParamBlocks,
    noise: NoiseSpec,
    s: usize,
    want_trace: bool,
) -> Result<(CouplingRun, Option<Table>), LabError> {
    let wnet = net.with_width(width)?;
    let ds = dataset(cfg, sur, target, cfg.data.n, noise, seed_for(cfg, TAG_DATA, 0, s))?;
    let batch = Batch::from_samples(ds.points.clone(), &ds.labels)?;
    let opts = TrainOptions::new(cfg.train.alpha, cfg.train.steps)
        .with_snapshots(1)
        .with_blocks(blocks);
    let (_, record) = gd_train(&batch, &wnet, &opts, seed_for(cfg, TAG_INIT, 0, s))?;
    let snaps = record.dense_snapshots()?;
    let theta0 = &snaps[0];
    let feats = tangent_features(theta0, &wnet, &ds.points, blocks)?;
    let k = feature_gram(ds.n(), wnet.param_len(), &feats, KernelKind::Empirical { width }, wnet.kappa_sq())?;
    let shifted: Vec<f64> = ds
        .points
        .iter()
        .zip(&ds.labels)
        .map(|(x, y)| Ok(y - forward(theta0, x, &wnet)?))
        .collect::<Result<_, Error>>()?;
    let traj = kgd_run(&k, &shifted, cfg.train.alpha, cfg.train.steps)?;
    let inputs = CouplingInputs {
        cfg: &wnet,
        blocks,
        snapshots: &snaps,
        kgd: &traj,
        kernel: &k,
        train_points: &ds.points,
        train_labels: &ds.labels,
    };
    let report = coupling_residual(&inputs, eval)?;
    info!("coupling: width {width} {} seed {s} done", blocks_id(blocks));
    let run = CouplingRun {
        sup_term_i: report.sup_term_i(),
        sup_term_ii: report.sup_term_ii(),
        final_term_iii: report.rows.last().map_or(f64::NAN, |r| r.term_iii),
        max_distance: report.max_distance,
        term_i_bound: report.term_i_bound,
        max_defect: report.max_defect(),
    };
    Ok((run, want_trace.then(|| coupling_table(&report))))
}

/// `weights`: maximal parameter movement against the horizon.
pub fn weight_sweep(cfg: &Config) -> Result<RunReport, LabError> {
    let wc = &cfg.weights;
    let net = cfg.network.build()?;
    let r = cfg.target.r;
    let mut table = Table::new(&["T", "width", "runs", "failed", "median_max_distance", "envelope", "ratio"]);
    if wc.t_grid.is_empty() {
        let mut rep = RunReport::new("weights", cfg, table);
        rep.finished_unix_s = now_unix();
        return Ok(rep);
    }
    if wc.t_grid.len() < 4 || wc.t_grid.iter().any(|&t| t < 2) {
        return Err(LabError::Config {
            key: "weights.t_grid".into(),
            reason: "need at least 4 horizons, each at least 2".into(),
        });
    }
    let sur = build_surrogate(cfg, &net)?;
    let target = build_target(cfg, &sur.model)?;
    let noise = noise_spec(cfg);
    let plan: Vec<(usize, usize)> = wc
        .t_grid
        .iter()
        .map(|&t| {
            let w = weight_width(t, r, net.dim, cfg.bounds.constant);
            (t, even_clamp(wc.width_scale * w, wc.min_width, wc.max_width))
        })
        .collect();
    let reps = wc.reps;
    let results = run_indexed(cfg.threads, plan.len() * reps, |k| -> Result<f64, LabError> {
        let (cell, rep) = (k / reps, k % reps);
        let (t, width) = plan[cell];
        let wnet = net.with_width(width)?;
        let ds = dataset(cfg, &sur, &target, cfg.data.n, noise, seed_for(cfg, TAG_DATA, 0, rep))?;
        let (batch, _) = ds.grouped_batch(&sur.model)?;
        let opts = TrainOptions::new(cfg.train.alpha, t).with_blocks(cfg.train.blocks);
        let (_, record) = gd_train(&batch, &wnet, &opts, seed_for(cfg, TAG_INIT, 0, rep))?;
        info!("weights: T = {t} rep {rep} done");
        Ok(record.max_distance())
    })?;
    let mut medians = Vec::new();
    let mut ratios = Vec::new();
    let mut failures = 0usize;
    let mut rows = Vec::new();
    for (cell, &(t, width)) in plan.iter().enumerate() {
        let mut ds = Vec::new();
        let mut failed = 0usize;
        for res in &results[cell * reps..(cell + 1) * reps] {
            match res {
                Ok(d) => ds.push(*d),
                Err(e) if is_divergence(e) => failed += 1,
                Err(e) => return Err(clone_err(e)),
            }
        }
        failures += failed;
        let md = finite_or_nan(&ds);
        let env = weight_envelope(t, r);
        if failed == 0 && !ds.is_empty() {
            medians.push((t as f64, md));
            ratios.push(md / env);
        }
        rows.push(vec![
            t.into(),
            width.into(),
            ds.len().into(),
            failed.into(),
            md.into(),
            env.into(),
            Cell::Float(md / env),
        ]);
    }
    for row in rows {
        table.push(row);
    }
    let mut rep = RunReport::new("weights", cfg, table);
    rep.notes.push(AGGREGATE_NOTE.into());
    rep.headline = Some(if r >= 0.5 { "ratio_spread" } else { "growth" }.into());
    let reference = if r >= 0.5 { None } else { Some(0.5 - r) };
    fit_slope(&mut rep, "growth", &medians, reference)?;
    if !ratios.is_empty() {
        let hi = ratios.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lo = ratios.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if lo > 0.0 {
            rep.metric("ratio_spread", hi / lo);
        }
    }
    rep.metric("diverged_runs", failures as f64);
    rep.seed("atoms", 0, 0, sur.model.seed);
    rep.seed("target", 0, 0, target.seed);
    for r in 0..reps {
        rep.seed("data", 0, r, seed_for(cfg, TAG_DATA, 0, r));
        rep.seed("init", 0, r, seed_for(cfg, TAG_INIT, 0, r));
    }
    rep.finished_unix_s = now_unix();
    Ok(rep)
}
