//! Time stepping for single particles, interacting particle systems, law
//! proxies of the mean-field limit, and the unconfined dynamics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymMatrix;
use crate::metrics::PhasePoint;
use crate::model::{InteractionKind, ModelSpec, Perturbation};
use crate::rng::{NoiseSource, CHANNEL_SYNC};

/// Particle count above which drift evaluation and noise generation are
/// split across the rayon pool.
const PARALLEL_THRESHOLD: usize = 512;
/// States larger than this are treated as a blow-up.
const BLOW_UP: f64 = 1e150;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t} (particle {particle})")]
    BlowUp { t: f64, particle: usize },
    #[error("law proxy needs at least 2 members, got {0}")]
    ProxyTooSmall(usize),
    #[error("initial ensemble is not centered: |mean| = {mean:e} exceeds {tolerance:e}")]
    NotCentered { mean: f64, tolerance: f64 },
    #[error("model has no unconfined interaction splitting")]
    NotUnconfined,
    #[error("ensemble dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid integrator setting: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    OuSplitting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub substream: u64,
    /// Set to false to switch the Brownian forcing off.
    #[serde(default = "default_true")]
    pub noise: bool,
}

fn default_true() -> bool {
    true
}

pub fn default_step(gamma: f64) -> f64 {
    0.01f64.min(0.1 / gamma)
}

impl IntegratorConfig {
    pub fn new(step: f64, horizon: f64) -> Self {
        IntegratorConfig { step, horizon, scheme: Scheme::OuSplitting, seed: 0, substream: 0, noise: true }
    }

    pub fn for_model(spec: &ModelSpec, horizon: f64) -> Self {
        Self::new(default_step(spec.gamma), horizon)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_substream(mut self, substream: u64) -> Self {
        self.substream = substream;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(DynamicsError::Config("step must be positive".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(DynamicsError::Config("horizon must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon (the last step is not shortened).
    pub fn steps(&self) -> u64 {
        (self.horizon / self.step - 1e-9).ceil().max(0.0) as u64
    }

    pub fn noise_source(&self, dim: usize) -> NoiseSource {
        NoiseSource::new(self.seed, self.substream, dim)
    }
}

/// Coefficients of one step of either scheme.
#[derive(Clone, Copy, Debug)]
pub struct StepCoefficients {
    pub h: f64,
    pub gamma: f64,
    pub u: f64,
    pub scheme: Scheme,
    /// `exp(-gamma h)`
    pub decay: f64,
    /// `(1 - exp(-gamma h)) / gamma`
    pub transport: f64,
    /// Noise on the velocity: `sy * xi`.
    pub sy: f64,
    /// Noise on the position: `sxy * xi + sx * eta`.
    pub sxy: f64,
    pub sx: f64,
}

impl StepCoefficients {
    pub fn new(gamma: f64, u: f64, h: f64, scheme: Scheme, noise: bool) -> Self {
        let noise_scale = if noise { 1.0 } else { 0.0 };
        match scheme {
            Scheme::EulerMaruyama => StepCoefficients {
                h,
                gamma,
                u,
                scheme,
                decay: 1.0 - gamma * h,
                transport: h,
                sy: noise_scale * (2.0 * gamma * u * h).sqrt(),
                sxy: 0.0,
                sx: 0.0,
            },
            Scheme::OuSplitting => {
                let e1 = (-gamma * h).exp();
                let om1 = -(-gamma * h).exp_m1();
                let om2 = -(-2.0 * gamma * h).exp_m1();
                let var_y = u * om2;
                let var_x = 2.0 * u / gamma * (h - 2.0 * om1 / gamma + om2 / (2.0 * gamma));
                let cov = u / gamma * om1 * om1;
                let sy = var_y.sqrt();
                let sxy = if sy > 0.0 { cov / sy } else { 0.0 };
                let sx = (var_x - sxy * sxy).max(0.0).sqrt();
                StepCoefficients {
                    h,
                    gamma,
                    u,
                    scheme,
                    decay: e1,
                    transport: om1 / gamma,
                    sy: noise_scale * sy,
                    sxy: noise_scale * sxy,
                    sx: noise_scale * sx,
                }
            }
        }
    }

    pub fn from_config(spec: &ModelSpec, cfg: &IntegratorConfig) -> Self {
        Self::new(spec.gamma, spec.u, cfg.step, cfg.scheme, cfg.noise)
    }

    /// Advances one coordinate given the force `b` (before multiplying by
    /// `u`) and the two standard normals of that coordinate.
    #[inline]
    pub fn advance(&self, x: &mut f64, y: &mut f64, b: f64, xi: f64, eta: f64) {
        match self.scheme {
            Scheme::EulerMaruyama => {
                let y0 = *y;
                *y = self.decay * y0 + self.h * self.u * b + self.sy * xi;
                *x += self.h * y0;
            }
            Scheme::OuSplitting => {
                let y0 = *y + self.h * self.u * b;
                *x += self.transport * y0 + self.sxy * xi + self.sx * eta;
                *y = self.decay * y0 + self.sy * xi;
            }
        }
    }
}

/// `N` particles in `R^{2d}` stored as flat position and velocity arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Noise address of every particle.
    pub ids: Vec<u64>,
    pub t: f64,
    /// Number of steps taken; also the noise step index.
    pub step_index: u64,
}

impl Ensemble {
    pub fn new(dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert_eq!(xs.len() % dim, 0);
        let n = xs.len() / dim;
        Ensemble { dim, xs, ys, ids: (0..n as u64).collect(), t: 0.0, step_index: 0 }
    }

    pub fn from_points(points: &[PhasePoint]) -> Self {
        let dim = points.first().map(|p| p.dim()).unwrap_or(1);
        let xs = points.iter().flat_map(|p| p.x.iter().copied()).collect();
        let ys = points.iter().flat_map(|p| p.y.iter().copied()).collect();
        Self::new(dim, xs, ys)
    }

    /// `n` copies of one point.
    pub fn dirac(point: &PhasePoint, n: usize) -> Self {
        Self::from_points(&vec![point.clone(); n])
    }

    pub fn with_ids(mut self, ids: Vec<u64>) -> Self {
        assert_eq!(ids.len(), self.len());
        self.ids = ids;
        self
    }

    pub fn len(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point(&self, i: usize) -> PhasePoint {
        PhasePoint::new(self.x(i).to_vec(), self.y(i).to_vec())
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn mean_x(&self) -> Vec<f64> {
        column_mean(&self.xs, self.dim)
    }

    pub fn mean_y(&self) -> Vec<f64> {
        column_mean(&self.ys, self.dim)
    }

    /// Subtracts the ensemble mean from positions and velocities.
    pub fn center(&mut self) {
        let (mx, my) = (self.mean_x(), self.mean_y());
        for (i, v) in self.xs.iter_mut().enumerate() {
            *v -= mx[i % self.dim];
        }
        for (i, v) in self.ys.iter_mut().enumerate() {
            *v -= my[i % self.dim];
        }
    }

    /// Norm of the mean of `(x, y)` and its Monte Carlo standard error.
    pub fn centering(&self) -> (f64, f64) {
        let n = self.len() as f64;
        let (mx, my) = (self.mean_x(), self.mean_y());
        let mean = mx.iter().chain(&my).map(|v| v * v).sum::<f64>().sqrt();
        let mut var = 0.0;
        for i in 0..self.xs.len() {
            let d = i % self.dim;
            var += (self.xs[i] - mx[d]).powi(2) + (self.ys[i] - my[d]).powi(2);
        }
        let se = if n > 1.0 { (var / (n - 1.0) / n).sqrt() } else { 0.0 };
        (mean, se)
    }

    pub fn is_finite(&self) -> Result<(), DynamicsError> {
        for (i, (x, y)) in self.xs.iter().zip(&self.ys).enumerate() {
            if !(x.abs() < BLOW_UP && y.abs() < BLOW_UP) {
                return Err(DynamicsError::BlowUp { t: self.t, particle: i / self.dim });
            }
        }
        Ok(())
    }

    /// Writes rows `t,i,x...,y...` (no header).
    pub fn write_csv_rows<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for i in 0..self.len() {
            write!(w, "{},{}", self.t, i)?;
            for v in self.x(i).iter().chain(self.y(i)) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Header `t,i,x0..,y0..` of trajectory dumps.
pub fn csv_header(dim: usize) -> String {
    let mut h = String::from("t,i");
    for k in 0..dim {
        h.push_str(&format!(",x{k}"));
    }
    for k in 0..dim {
        h.push_str(&format!(",y{k}"));
    }
    h
}

fn column_mean(v: &[f64], dim: usize) -> Vec<f64> {
    let n = (v.len() / dim).max(1) as f64;
    let mut m = vec![0.0; dim];
    for (i, a) in v.iter().enumerate() {
        m[i % dim] += a;
    }
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// How the interaction mean is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InteractionPath {
    /// Use the O(N) shortcut whenever the interaction is affine.
    Auto,
    /// Always sum over all pairs.
    Pairwise,
}

/// Fills `out` with `b(x_i) + mean_j b~(x_i, law_j)` for every particle `i`
/// of `xs`. `law` is `None` for classical dynamics (no interaction term).
pub fn drift_into(spec: &ModelSpec, xs: &[f64], law: Option<&[f64]>, path: InteractionPath, out: &mut [f64]) {
    let d = spec.dimension;
    let n = xs.len() / d;
    let fill_external = |i: usize, o: &mut [f64]| spec.external.force_into(&xs[i * d..(i + 1) * d], o);
    if n >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(d).enumerate().for_each(|(i, o)| fill_external(i, o));
    } else {
        out.chunks_mut(d).enumerate().for_each(|(i, o)| fill_external(i, o));
    }
    let Some(law) = law else { return };
    let m = law.len() / d;
    if m == 0 {
        return;
    }
    let kind = &spec.interaction.kind;
    if matches!(kind, InteractionKind::None) {
        return;
    }
    if path == InteractionPath::Auto {
        match kind {
            InteractionKind::Linear { k } => {
                let mean = column_mean(law, d);
                for o in out.chunks_mut(d) {
                    for c in 0..d {
                        o[c] += k * mean[c];
                    }
                }
                return;
            }
            InteractionKind::Unconfined(s) if s.perturbation == Perturbation::None => {
                let mean = column_mean(law, d);
                let mut diff = vec![0.0; d];
                let mut kd = vec![0.0; d];
                for (o, x) in out.chunks_mut(d).zip(xs.chunks(d)) {
                    for c in 0..d {
                        diff[c] = x[c] - mean[c];
                    }
                    s.k.mul_into(&diff, &mut kd);
                    for c in 0..d {
                        o[c] -= kd[c];
                    }
                }
                return;
            }
            _ => {}
        }
    }
    let pair_mean = |i: usize, o: &mut [f64]| {
        let xi = &xs[i * d..(i + 1) * d];
        let mut acc = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for z in law.chunks(d) {
            spec.interaction.force_into(xi, z, &mut tmp);
            for c in 0..d {
                acc[c] += tmp[c];
            }
        }
        for c in 0..d {
            o[c] += acc[c] / m as f64;
        }
    };
    if n * m >= PARALLEL_THRESHOLD * 64 {
        out.par_chunks_mut(d).enumerate().for_each(|(i, o)| pair_mean(i, o));
    } else {
        out.chunks_mut(d).enumerate().for_each(|(i, o)| pair_mean(i, o));
    }
}

/// Draws the `(xi, eta)` normals of every particle of `ens` for its current
/// step on `channel`.
pub fn draw_noise(noise: &NoiseSource, channel: u32, ens: &Ensemble, xi: &mut [f64], eta: &mut [f64]) {
    let d = ens.dim;
    let n = ens.len();
    if n >= PARALLEL_THRESHOLD {
        let chunk = 256;
        xi.par_chunks_mut(chunk * d).zip(eta.par_chunks_mut(chunk * d)).enumerate().for_each(|(c, (a, b))| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            noise.draw_many(channel, ens.step_index, &ens.ids[lo..hi], a, b);
        });
    } else {
        noise.draw_many(channel, ens.step_index, &ens.ids, xi, eta);
    }
}

/// Which of the four systems is being integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// Independent particles without interaction.
    Classical,
    /// The mean-field particle system; particles interact with each other.
    Particles,
    /// Particles interact with their own empirical law, read as a proxy
    /// for the law of the nonlinear process.
    McKeanVlasov,
    /// Unconfined interaction, no external force, centered initial law.
    Unconfined,
}

/// Reusable stepping state for one ensemble.
pub struct Stepper<'a> {
    pub spec: &'a ModelSpec,
    pub coef: StepCoefficients,
    pub noise: NoiseSource,
    pub system: System,
    pub path: InteractionPath,
    force: Vec<f64>,
    xi: Vec<f64>,
    eta: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a ModelSpec, cfg: &IntegratorConfig, system: System) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        if system == System::Unconfined && spec.interaction.unconfined_splitting().is_none() {
            return Err(DynamicsError::NotUnconfined);
        }
        Ok(Stepper {
            spec,
            coef: StepCoefficients::from_config(spec, cfg),
            noise: cfg.noise_source(spec.dimension),
            system,
            path: InteractionPath::Auto,
            force: Vec::new(),
            xi: Vec::new(),
            eta: Vec::new(),
        })
    }

    /// Checks the ensemble before the first step.
    pub fn check(&self, ens: &Ensemble) -> Result<(), DynamicsError> {
        if ens.dim != self.spec.dimension {
            return Err(DynamicsError::Dimension { expected: self.spec.dimension, got: ens.dim });
        }
        if self.system == System::McKeanVlasov && ens.len() < 2 {
            return Err(DynamicsError::ProxyTooSmall(ens.len()));
        }
        if self.system == System::Unconfined {
            let (mean, se) = ens.centering();
            let tolerance = 5.0 * se + 1e-9;
            if mean > tolerance {
                return Err(DynamicsError::NotCentered { mean, tolerance });
            }
        }
        Ok(())
    }

    fn resize(&mut self, len: usize) {
        if self.force.len() != len {
            self.force = vec![0.0; len];
            self.xi = vec![0.0; len];
            self.eta = vec![0.0; len];
        }
    }

    /// Computes the drift of `ens` against the law sample `law` (or the
    /// ensemble itself when `None` and the system interacts).
    pub fn drift(&mut self, ens: &Ensemble, law: Option<&[f64]>) -> &[f64] {
        self.resize(ens.xs.len());
        let law = match self.system {
            System::Classical => None,
            _ => Some(law.unwrap_or(&ens.xs)),
        };
        drift_into(self.spec, &ens.xs, law, self.path, &mut self.force);
        &self.force
    }

    /// One step of `ens`; the interaction mean is taken over `law` when given.
    pub fn step_with_law(&mut self, ens: &mut Ensemble, law: Option<&[f64]>) -> Result<(), DynamicsError> {
        self.drift(ens, law);
        draw_noise(&self.noise, CHANNEL_SYNC, ens, &mut self.xi, &mut self.eta);
        let coef = self.coef;
        for k in 0..ens.xs.len() {
            coef.advance(&mut ens.xs[k], &mut ens.ys[k], self.force[k], self.xi[k], self.eta[k]);
        }
        ens.step_index += 1;
        ens.t = ens.step_index as f64 * coef.h;
        ens.is_finite()
    }

    pub fn step(&mut self, ens: &mut Ensemble) -> Result<(), DynamicsError> {
        self.step_with_law(ens, None)
    }
}

/// One step of a single particle without interaction.
pub fn step_classical(spec: &ModelSpec, state: &PhasePoint, cfg: &IntegratorConfig, step_index: u64, id: u64) -> Result<PhasePoint, DynamicsError> {
    let mut ens = Ensemble::from_points(std::slice::from_ref(state)).with_ids(vec![id]);
    ens.step_index = step_index;
    Stepper::new(spec, cfg, System::Classical)?.step(&mut ens)?;
    Ok(ens.point(0))
}

pub fn step_particles(spec: &ModelSpec, ens: &mut Ensemble, cfg: &IntegratorConfig) -> Result<(), DynamicsError> {
    let mut s = Stepper::new(spec, cfg, System::Particles)?;
    s.check(ens)?;
    s.step(ens)
}

pub fn step_mckean_vlasov(spec: &ModelSpec, ens: &mut Ensemble, cfg: &IntegratorConfig) -> Result<(), DynamicsError> {
    let mut s = Stepper::new(spec, cfg, System::McKeanVlasov)?;
    s.check(ens)?;
    s.step(ens)
}

pub fn step_unconfined(spec: &ModelSpec, ens: &mut Ensemble, cfg: &IntegratorConfig) -> Result<(), DynamicsError> {
    let mut s = Stepper::new(spec, cfg, System::Unconfined)?;
    s.check(ens)?;
    s.step(ens)
}

/// Integrates `ens` to the horizon of `cfg`, calling `observe` at time 0
/// and after every `dump_every` steps (and at the final step).
pub fn simulate<F: FnMut(&Ensemble)>(
    spec: &ModelSpec,
    ens: &mut Ensemble,
    cfg: &IntegratorConfig,
    system: System,
    dump_every: u64,
    mut observe: F,
) -> Result<(), DynamicsError> {
    let mut s = Stepper::new(spec, cfg, system)?;
    s.check(ens)?;
    let steps = cfg.steps();
    let every = dump_every.max(1);
    observe(ens);
    for k in 1..=steps {
        s.step(ens)?;
        if k % every == 0 || k == steps {
            observe(ens);
        }
    }
    Ok(())
}

/// Ensemble moments at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentSample {
    pub t: f64,
    /// Mean of `|x|^2`.
    pub ex2: f64,
    /// Mean of `|y|^2`.
    pub ey2: f64,
    /// Mean of `gamma^-2 u x.Kx + |(1-2t) x + gamma^-1 y|^2 / 2 + gamma^-2 |y|^2 / 2`.
    pub lyapunov: f64,
}

/// The quadratic form whose ensemble mean is tracked by [`track_moments`].
#[derive(Clone, Debug)]
pub struct LyapunovForm {
    pub k: SymMatrix,
    pub twist: f64,
    pub gamma: f64,
    pub u: f64,
}

impl LyapunovForm {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let gi = 1.0 / self.gamma;
        let a = 1.0 - 2.0 * self.twist;
        let mut mixed = 0.0;
        let mut yy = 0.0;
        for i in 0..x.len() {
            let m = a * x[i] + gi * y[i];
            mixed += m * m;
            yy += y[i] * y[i];
        }
        gi * gi * self.u * self.k.quad(x) + 0.5 * mixed + 0.5 * gi * gi * yy
    }
}

pub fn moment_sample(ens: &Ensemble, form: &LyapunovForm) -> MomentSample {
    let n = ens.len().max(1) as f64;
    let (mut ex2, mut ey2, mut ly) = (0.0, 0.0, 0.0);
    for i in 0..ens.len() {
        let (x, y) = (ens.x(i), ens.y(i));
        ex2 += x.iter().map(|v| v * v).sum::<f64>();
        ey2 += y.iter().map(|v| v * v).sum::<f64>();
        ly += form.eval(x, y);
    }
    MomentSample { t: ens.t, ex2: ex2 / n, ey2: ey2 / n, lyapunov: ly / n }
}

/// Moments along a sequence of ensemble snapshots.
pub fn track_moments<'e, I: IntoIterator<Item = &'e Ensemble>>(trajectory: I, form: &LyapunovForm) -> Vec<MomentSample> {
    trajectory.into_iter().map(|e| moment_sample(e, form)).collect()
}

/// The plateau verdict: over the last half of the series, the maximum stays
/// within `factor` times the median.
pub fn plateau(values: &[f64], factor: f64) -> bool {
    if values.is_empty() {
        return true;
    }
    let mut tail: Vec<f64> = values[values.len() / 2..].to_vec();
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = tail[tail.len() / 2];
    max <= factor * median || max == 0.0
}
