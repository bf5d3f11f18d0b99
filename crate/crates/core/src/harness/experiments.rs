//! Experiment drivers.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use super::config::{resampling_rng, ConfigError, ExperimentConfig, ExperimentKind};
use crate::constants::{derive_constants, ConstantsError, Derivation, Diagnostic, MetricConstants};
use crate::coupling::{
    summarize, ComponentwiseCoupling, CoupledEnsemble, CoupledStepper, CoupledSummary, CouplingControl, CouplingError, CouplingMode,
    LawTerm, RcEvaluator,
};
use crate::dynamics::{moment_sample, plateau, DynamicsError, Ensemble, IntegratorConfig, LyapunovForm, MomentSample, Stepper, System};
use crate::metrics::{GroundMetric, MetricError, RhoMetric};
use crate::model::{InteractionKind, ModelSpec};
use crate::transport::{wasserstein_bootstrap_paired, TransportError, MAX_SUPPORT};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean distance at one dump time, the theoretical bound and the budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    /// `exp(-rate t) mean(0)`
    pub bound: f64,
    pub budget: f64,
    /// `mean - bound - budget`; positive values violate the inequality.
    pub excess: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub rate_se: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChaosRow {
    pub n: usize,
    /// Exact-assignment Wasserstein estimate between the two sample sets.
    pub w: f64,
    pub w_se: f64,
    /// Mean distance of the coupled samples (identity matching).
    pub coupled_mean: f64,
    pub coupled_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRecord {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub step: f64,
    pub horizon: f64,
    pub replicas: usize,
    pub constants: MetricConstants,
    pub diagnostics: Vec<Diagnostic>,
    /// False when a condition of the contraction statement fails.
    pub guarantee: bool,
    pub metric: String,
    pub theory_rate: f64,
    pub series: Vec<SeriesPoint>,
    pub inequality_holds: Option<bool>,
    /// Discretization constant of the budget (zero unless calibrated).
    pub c_h: f64,
    pub rate_fit: Option<RateFit>,
    pub moments: Vec<MomentSample>,
    pub plateau: Option<bool>,
    pub chaos: Vec<ChaosRow>,
    pub slope_fit: Option<SlopeFit>,
    pub proxy_size: Option<usize>,
    /// Empirical surrogate `max_N rate * W * sqrt(N)` for the chaos constant.
    pub c1_surrogate: Option<f64>,
    /// Empirical surrogate `max_t E|X_t|^2` for the moment constant.
    pub c2_surrogate: Option<f64>,
    pub notes: Vec<String>,
}

impl ExperimentRecord {
    fn new(cfg: &ExperimentConfig, der: &Derivation, metric: &str, theory_rate: f64) -> Self {
        let ic = cfg.integrator_config();
        ExperimentRecord {
            experiment: cfg.experiment,
            config_hash: cfg.hash(),
            seed: ic.seed,
            step: ic.step,
            horizon: ic.horizon,
            replicas: cfg.replicas,
            constants: der.constants.clone(),
            diagnostics: der.diagnostics.clone(),
            guarantee: der.diagnostics.is_empty(),
            metric: metric.to_string(),
            theory_rate,
            series: Vec::new(),
            inequality_holds: None,
            c_h: 0.0,
            rate_fit: None,
            moments: Vec::new(),
            plateau: None,
            chaos: Vec::new(),
            slope_fit: None,
            proxy_size: None,
            c1_surrogate: None,
            c2_surrogate: None,
            notes: Vec::new(),
        }
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from("t,mean,se,bound,budget,excess\n");
        for p in &self.series {
            s.push_str(&format!("{},{},{},{},{},{}\n", p.t, p.mean, p.se, p.bound, p.budget, p.excess));
        }
        s
    }

    pub fn moments_csv(&self) -> String {
        let mut s = String::from("t,ex2,ey2,lyapunov\n");
        for m in &self.moments {
            s.push_str(&format!("{},{},{},{}\n", m.t, m.ex2, m.ey2, m.lyapunov));
        }
        s
    }

    pub fn chaos_csv(&self) -> String {
        let mut s = String::from("n,w,w_se,coupled_mean,coupled_se\n");
        for r in &self.chaos {
            s.push_str(&format!("{},{},{},{},{}\n", r.n, r.w, r.w_se, r.coupled_mean, r.coupled_se));
        }
        s
    }
}

/// Sample mean and bootstrap standard error of the mean.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || resamples < 2 {
        return (mean, 0.0);
    }
    let mut rng = resampling_rng(seed, n as u64);
    let mut ms = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.gen_range(0..n)];
        }
        ms.push(acc / n as f64);
    }
    let m = ms.iter().sum::<f64>() / resamples as f64;
    let var = ms.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples - 1) as f64;
    (mean, var.sqrt())
}

/// Least squares slope of `ys` on `xs` and its standard error.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = if xs.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, se)
}

/// Fits `log mean = a - rate t` over the dump times where the mean exceeds
/// five standard errors and `floor * mean(0)`.
pub fn fit_rate(series: &[SeriesPoint], floor: f64) -> Option<RateFit> {
    let m0 = series.first()?.mean;
    let pts: Vec<&SeriesPoint> = series.iter().filter(|p| p.mean > 5.0 * p.se && p.mean > floor * m0 && p.mean > 0.0).collect();
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.mean.ln()).collect();
    let (slope, _, se) = ols(&xs, &ys);
    Some(RateFit { rate: -slope, rate_se: se, t_start: xs[0], t_end: *xs.last().unwrap(), points: xs.len() })
}

/// Two-sided 95% Student quantile.
fn t_quantile(df: usize) -> f64 {
    const T: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    if df == 0 {
        f64::INFINITY
    } else if df <= 10 {
        T[df - 1]
    } else {
        1.96
    }
}

pub fn fit_slope(ns: &[usize], ws: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = ns.iter().zip(ws).filter(|(_, w)| **w > 0.0).map(|(n, w)| ((*n as f64).ln(), w.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, _, se) = ols(&xs, &ys);
    let q = t_quantile(pts.len().saturating_sub(2)) * se;
    Some(SlopeFit { slope, se, ci_low: slope - q, ci_high: slope + q, points: pts.len() })
}

fn default_xi(cfg: &ExperimentConfig, c: &MetricConstants) -> f64 {
    let h = cfg.integrator_config().step;
    CouplingControl::default_width_for_step(c, cfg.model.gamma, cfg.model.u, h)
}

struct ContractionSetup {
    metric: GroundMetric,
    rate: f64,
    rc: RcEvaluator,
    law: LawTerm,
    center: bool,
    rho: Option<RhoMetric>,
}

fn contraction_setup(cfg: &ExperimentConfig, der: &Derivation) -> Result<ContractionSetup, HarnessError> {
    let spec = &cfg.model;
    let c = &der.constants;
    let interacting = !matches!(spec.interaction.kind, InteractionKind::None);
    let mode = cfg.coupling.mode.unwrap_or(CouplingMode::ReflectionMix);
    let control = CouplingControl::new(cfg.coupling.xi.unwrap_or_else(|| default_xi(cfg, c)), mode)
        .map_err(HarnessError::Coupling)?;
    Ok(match cfg.experiment {
        ExperimentKind::ContractStrong => ContractionSetup {
            metric: GroundMetric::r_strong(spec, c),
            rate: c.c_strong,
            rc: RcEvaluator::synchronous(spec),
            law: if interacting { LawTerm::OwnEnsemble } else { LawTerm::Ignore },
            center: false,
            rho: None,
        },
        ExperimentKind::ContractClassical | ExperimentKind::ContractNonlinear => {
            let nonlinear = cfg.experiment == ExperimentKind::ContractNonlinear;
            match RhoMetric::from_derivation(spec, der) {
                Ok(rho) => ContractionSetup {
                    metric: GroundMetric::Rho(std::sync::Arc::new(rho.clone())),
                    rate: if nonlinear { c.c_nonlinear } else { c.c_classical },
                    rc: RcEvaluator::from_rho(&rho, &control),
                    law: if nonlinear { LawTerm::OwnEnsemble } else { LawTerm::Ignore },
                    center: false,
                    rho: Some(rho),
                },
                Err(_) => ContractionSetup {
                    metric: GroundMetric::Euclidean,
                    rate: f64::NAN,
                    rc: RcEvaluator::synchronous(spec),
                    law: if nonlinear { LawTerm::OwnEnsemble } else { LawTerm::Ignore },
                    center: false,
                    rho: None,
                },
            }
        }
        ExperimentKind::UnconfinedContract => ContractionSetup {
            metric: GroundMetric::r_tilde(spec, c)?,
            rate: c.c_hat_unconfined,
            rc: RcEvaluator::synchronous(spec),
            law: LawTerm::OwnEnsemble,
            center: true,
            rho: None,
        },
        other => return Err(HarnessError::Unsupported(format!("{other:?} is not a contraction experiment"))),
    })
}

/// Mean distance series of a coupled run.
fn coupled_series(
    cfg: &ExperimentConfig,
    ic: &IntegratorConfig,
    setup: &ContractionSetup,
    dump_steps: &[u64],
) -> Result<Vec<(f64, f64, f64)>, HarnessError> {
    let spec = &cfg.model;
    let d = spec.dimension;
    let (mut a, mut b) = cfg.initial.sample(d, cfg.replicas, ic.seed, 0)?;
    if setup.center {
        a.center();
        b.center();
    }
    let mut pairs = CoupledEnsemble::new(a, b)?;
    let mut stepper = CoupledStepper::new(spec, ic, setup.rc.clone(), setup.law)?;
    let mut out = Vec::with_capacity(dump_steps.len());
    let mut z = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut vals = vec![0.0; pairs.len()];
    let mut record = |pairs: &CoupledEnsemble, out: &mut Vec<(f64, f64, f64)>| {
        for (i, v) in vals.iter_mut().enumerate() {
            pairs.diff_into(i, &mut z, &mut w);
            *v = setup.metric.norm(&z, &w);
        }
        let (m, se) = bootstrap_mean(&vals, cfg.bootstrap, ic.seed ^ pairs.first.step_index);
        out.push((pairs.t(), m, se));
    };
    let last = *dump_steps.last().unwrap_or(&0);
    let mut next = 0;
    for k in 0..=last {
        if k > 0 {
            stepper.step(&mut pairs)?;
        }
        if next < dump_steps.len() && dump_steps[next] == k {
            record(&pairs, &mut out);
            next += 1;
        }
    }
    Ok(out)
}

pub fn run_contraction(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    let der = derive_constants(&cfg.model)?;
    let setup = contraction_setup(cfg, &der)?;
    let ic = cfg.integrator_config();
    let mut rec = ExperimentRecord::new(cfg, &der, setup.metric.name(), setup.rate);
    if !rec.guarantee {
        rec.notes.push("no guarantee: admissibility conditions fail".into());
    }
    if setup.rate.is_nan() {
        rec.notes.push("theoretical rate undefined; distances measured in the euclidean metric".into());
    }
    if setup.rho.as_ref().is_some_and(|r| r.degenerate) {
        rec.notes.push("R = 0: rho coincides with r_l and the coupling is synchronous".into());
    }
    let steps = cfg.dump_steps();
    let series = coupled_series(cfg, &ic, &setup, &steps)?;

    if cfg.tolerance.calibrate_step {
        let mut half = cfg.clone();
        half.integrator.step = Some(ic.step / 2.0);
        let hic = half.integrator_config();
        let half_steps: Vec<u64> = steps.iter().map(|s| 2 * s).collect();
        let fine = coupled_series(&half, &hic, &setup, &half_steps)?;
        let mut c_h = 0.0f64;
        for (a, b) in series.iter().zip(&fine) {
            let se = (a.2 * a.2 + b.2 * b.2).sqrt();
            c_h = c_h.max(2.0 * ((a.1 - b.1).abs() - 2.0 * se).max(0.0) / ic.step);
        }
        rec.c_h = c_h;
    }

    let m0 = series.first().map(|s| s.1).unwrap_or(0.0);
    let tol = &cfg.tolerance;
    for &(t, mean, se) in &series {
        let bound = (-setup.rate * t).exp() * m0;
        let budget = tol.se_factor * se + rec.c_h * ic.step + tol.relative * bound;
        rec.series.push(SeriesPoint { t, mean, se, bound, budget, excess: mean - bound - budget });
    }
    if setup.rate.is_finite() {
        rec.inequality_holds = Some(rec.series.iter().all(|p| p.excess <= 0.0));
    }
    rec.rate_fit = fit_rate(&rec.series, cfg.fit_floor.unwrap_or(0.0));
    Ok(rec)
}

fn lyapunov_form(spec: &ModelSpec, c: &MetricConstants) -> LyapunovForm {
    match spec.interaction.unconfined_splitting() {
        Some(s) if spec.is_unconfined() => LyapunovForm { k: s.k.clone(), twist: c.sigma, gamma: spec.gamma, u: spec.u },
        _ => {
            let twist = if c.tau.is_finite() && c.tau > 0.0 { c.tau } else { c.lambda };
            LyapunovForm { k: spec.external.splitting.k.clone(), twist, gamma: spec.gamma, u: spec.u }
        }
    }
}

pub fn system_of(spec: &ModelSpec) -> System {
    if spec.is_unconfined() {
        System::Unconfined
    } else if matches!(spec.interaction.kind, InteractionKind::None) {
        System::Classical
    } else {
        System::Particles
    }
}

pub fn run_moments(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    let der = derive_constants(&cfg.model)?;
    let spec = &cfg.model;
    let ic = cfg.integrator_config();
    let mut rec = ExperimentRecord::new(cfg, &der, "moments", f64::NAN);
    let form = lyapunov_form(spec, &der.constants);
    let system = system_of(spec);
    let mut ens = cfg.initial.sample_first(spec.dimension, cfg.replicas, ic.seed, 0)?;
    if system == System::Unconfined {
        ens.center();
    }
    let steps = cfg.dump_steps();
    let mut stepper = Stepper::new(spec, &ic, system)?;
    stepper.check(&ens)?;
    let last = *steps.last().unwrap_or(&0);
    let mut next = 0;
    let mut blew_up = None;
    for k in 0..=last {
        if k > 0 {
            if let Err(e) = stepper.step(&mut ens) {
                blew_up = Some(e);
                break;
            }
        }
        if next < steps.len() && steps[next] == k {
            rec.moments.push(moment_sample(&ens, &form));
            next += 1;
        }
    }
    rec.c2_surrogate = rec.moments.iter().map(|m| m.ex2).reduce(f64::max);
    match blew_up {
        Some(e) => {
            rec.plateau = Some(false);
            rec.notes.push(format!("blow-up: {e}"));
        }
        None => {
            let ly: Vec<f64> = rec.moments.iter().map(|m| m.lyapunov).collect();
            rec.plateau = Some(plateau(&ly, 1.05));
        }
    }
    Ok(rec)
}

/// `N^-1 sum_i |x_i - x'_i| + |y_i - y'_i|` between two ensembles.
pub fn l1_n(a: &Ensemble, b: &Ensemble) -> f64 {
    let d = a.dim;
    let n = a.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (mut zz, mut ww) = (0.0, 0.0);
        for k in 0..d {
            zz += (a.xs[i * d + k] - b.xs[i * d + k]).powi(2);
            ww += (a.ys[i * d + k] - b.ys[i * d + k]).powi(2);
        }
        acc += zz.sqrt() + ww.sqrt();
    }
    acc / n as f64
}

pub fn run_chaos(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    let der = derive_constants(&cfg.model)?;
    let spec = &cfg.model;
    let c = &der.constants;
    let unconfined = cfg.experiment == ExperimentKind::UnconfinedChaos;
    if unconfined && !spec.is_unconfined() {
        return Err(HarnessError::Unsupported("unconfined_chaos needs an unconfined model".into()));
    }
    let replicas = cfg.replicas.min(MAX_SUPPORT);
    let max_n = *cfg.ensemble_sizes.iter().max().unwrap_or(&1);
    let m = cfg.proxy_size.unwrap_or(8 * max_n);
    let rate = if unconfined { c.c_hat_unconfined } else { c.c_chaos };
    let mut rec = ExperimentRecord::new(cfg, &der, if unconfined { "centered_l1_n" } else { "l1_n" }, rate);
    rec.proxy_size = Some(m);
    if replicas < cfg.replicas {
        rec.notes.push(format!("replicas capped at {MAX_SUPPORT} for exact assignment"));
    }
    let rc = match RhoMetric::from_derivation(spec, &der) {
        Ok(rho) if !unconfined => {
            let mode = cfg.coupling.mode.unwrap_or(CouplingMode::Componentwise);
            let control = CouplingControl::new(cfg.coupling.xi.unwrap_or_else(|| default_xi(cfg, c)), mode)?;
            RcEvaluator::from_rho(&rho, &control)
        }
        _ => RcEvaluator::synchronous(spec),
    };
    let base = cfg.integrator_config();
    let d = spec.dimension;
    let mut ns = Vec::new();
    let mut ws = Vec::new();
    for &n in &cfg.ensemble_sizes {
        let ic = base.clone().with_substream(base.substream.wrapping_add(n as u64));
        let mut coupling = ComponentwiseCoupling::new(spec, &ic, rc.clone())?;
        let mut proxy = cfg.initial.sample_first(d, m, ic.seed, 1 << 40)?;
        if unconfined {
            proxy.center();
        }
        let mut reps = Vec::with_capacity(replicas);
        for r in 0..replicas {
            let mut e = cfg.initial.sample_first(d, n, ic.seed, ((n as u64) << 24) + r as u64 + 2)?;
            if unconfined {
                e.center();
            }
            let ids: Vec<u64> = (0..n as u64).map(|i| r as u64 * n as u64 + i).collect();
            let e = e.with_ids(ids);
            reps.push(CoupledEnsemble::new(e.clone(), e)?);
        }
        for _ in 0..ic.steps() {
            for pairs in reps.iter_mut() {
                coupling.pairs.step_with_law(pairs, Some(&proxy.xs))?;
            }
            coupling.step_proxy(&mut proxy)?;
        }
        let (mut firsts, mut seconds): (Vec<Ensemble>, Vec<Ensemble>) = reps.into_iter().map(|p| (p.first, p.second)).unzip();
        if unconfined {
            firsts.iter_mut().chain(seconds.iter_mut()).for_each(|e| e.center());
        }
        let mut cost = vec![0.0; replicas * replicas];
        for i in 0..replicas {
            for j in 0..replicas {
                cost[i * replicas + j] = l1_n(&firsts[i], &seconds[j]);
            }
        }
        let diag: Vec<f64> = (0..replicas).map(|i| cost[i * replicas + i]).collect();
        let (coupled_mean, coupled_se) = bootstrap_mean(&diag, cfg.bootstrap, ic.seed ^ n as u64);
        let (w, w_se) = wasserstein_bootstrap_paired(replicas, |i, j| cost[i * replicas + j], 1, cfg.bootstrap, ic.seed ^ (n as u64) << 8)?;
        rec.chaos.push(ChaosRow { n, w, w_se, coupled_mean, coupled_se });
        ns.push(n);
        ws.push(w);
    }
    rec.slope_fit = fit_slope(&ns, &ws);
    if rate.is_finite() && rate > 0.0 {
        rec.c1_surrogate = rec.chaos.iter().map(|r| rate * r.w * (r.n as f64).sqrt()).reduce(f64::max);
    }
    Ok(rec)
}

/// Runs the experiment named in the configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    match cfg.experiment {
        ExperimentKind::Chaos | ExperimentKind::UnconfinedChaos => run_chaos(cfg),
        ExperimentKind::Moments => run_moments(cfg),
        _ => run_contraction(cfg),
    }
}

/// Snapshots of the first initial law at the dump times.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Vec<Ensemble>, HarnessError> {
    let spec = &cfg.model;
    let ic = cfg.integrator_config();
    let system = system_of(spec);
    let mut ens = cfg.initial.sample_first(spec.dimension, cfg.replicas, ic.seed, 0)?;
    if system == System::Unconfined {
        ens.center();
    }
    let steps = cfg.dump_steps();
    let mut stepper = Stepper::new(spec, &ic, system)?;
    stepper.check(&ens)?;
    let mut out = Vec::with_capacity(steps.len());
    let mut next = 0;
    for k in 0..=*steps.last().unwrap_or(&0) {
        if k > 0 {
            stepper.step(&mut ens)?;
        }
        if next < steps.len() && steps[next] == k {
            out.push(ens.clone());
            next += 1;
        }
    }
    Ok(out)
}

/// Coupled-pair observables at the dump times.
pub fn run_coupled(cfg: &ExperimentConfig) -> Result<(Derivation, Vec<CoupledSummary>), HarnessError> {
    let der = derive_constants(&cfg.model)?;
    let spec = &cfg.model;
    let rho = RhoMetric::from_derivation(spec, &der)?;
    let mode = cfg.coupling.mode.unwrap_or(CouplingMode::ReflectionMix);
    let control = CouplingControl::new(cfg.coupling.xi.unwrap_or_else(|| default_xi(cfg, &der.constants)), mode)?;
    let rc = RcEvaluator::from_rho(&rho, &control);
    let ic = cfg.integrator_config();
    let (a, b) = cfg.initial.sample(spec.dimension, cfg.replicas, ic.seed, 0)?;
    let mut pairs = CoupledEnsemble::new(a, b)?;
    let law = if matches!(spec.interaction.kind, InteractionKind::None) { LawTerm::Ignore } else { LawTerm::OwnEnsemble };
    let mut stepper = CoupledStepper::new(spec, &ic, rc.clone(), law)?;
    let steps = cfg.dump_steps();
    let mut out = Vec::new();
    let mut next = 0;
    for k in 0..=*steps.last().unwrap_or(&0) {
        if k > 0 {
            stepper.step(&mut pairs)?;
        }
        if next < steps.len() && steps[next] == k {
            out.push(summarize(&pairs, &rho, &rc));
            next += 1;
        }
    }
    Ok((der, out))
}
