//! Couplings of two copies of the dynamics: synchronous, the mixed
//! reflection/synchronous coupling, and its componentwise version for
//! particle systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::MetricConstants;
use crate::dynamics::{draw_noise, drift_into, DynamicsError, Ensemble, IntegratorConfig, InteractionPath, StepCoefficients};
use crate::linalg::norm;
use crate::metrics::{r_s_norm, PhasePoint, RhoMetric, TwistedQuadratic};
use crate::model::ModelSpec;
use crate::rng::{NoiseSource, CHANNEL_PROXY, CHANNEL_REFLECT, CHANNEL_SYNC};

/// Below this norm of `Q` the reflection direction is set to zero.
pub const E_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CouplingError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("the two copies have different sizes: {0} vs {1}")]
    Length(usize, usize),
    #[error("smoothing width must be positive, got {0}")]
    Width(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Synchronous,
    #[default]
    ReflectionMix,
    Componentwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingControl {
    /// Width of the transition layers of `rc`.
    pub xi: f64,
    pub mode: CouplingMode,
}

impl CouplingControl {
    /// Default width `1e-3 R1`, floored at `1e-8`.
    pub fn default_width(c: &MetricConstants) -> f64 {
        let w = 1e-3 * c.r1;
        if w.is_finite() {
            w.max(1e-8)
        } else {
            1e-8
        }
    }

    /// Standard deviation of the one-step increment of `q = z + w / gamma`
    /// under full reflection, `2 sqrt(2 u h / gamma)`.
    pub fn reflection_step_scale(gamma: f64, u: f64, h: f64) -> f64 {
        2.0 * (2.0 * u * h / gamma).sqrt()
    }

    /// Default width for a discretized run: at least twice the one-step
    /// reflection increment, so that `q` cannot jump across the band where
    /// the coupling turns synchronous.
    pub fn default_width_for_step(c: &MetricConstants, gamma: f64, u: f64, h: f64) -> f64 {
        Self::default_width(c).max(2.0 * Self::reflection_step_scale(gamma, u, h))
    }

    pub fn new(xi: f64, mode: CouplingMode) -> Result<Self, CouplingError> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(CouplingError::Width(xi));
        }
        Ok(CouplingControl { xi, mode })
    }

    pub fn synchronous() -> Self {
        CouplingControl { xi: 1e-8, mode: CouplingMode::Synchronous }
    }
}

/// Two phase points with the difference views used by the coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub first: PhasePoint,
    pub second: PhasePoint,
}

impl CoupledState {
    pub fn new(first: PhasePoint, second: PhasePoint) -> Self {
        CoupledState { first, second }
    }

    pub fn z(&self) -> Vec<f64> {
        self.first.diff(&self.second).0
    }

    pub fn w(&self) -> Vec<f64> {
        self.first.diff(&self.second).1
    }

    /// `Q = Z + W / gamma`
    pub fn q(&self, gamma: f64) -> Vec<f64> {
        let (z, w) = self.first.diff(&self.second);
        z.iter().zip(&w).map(|(a, b)| a + b / gamma).collect()
    }

    /// `Q / |Q|`, or zero when `|Q|` is below [`E_CUTOFF`].
    pub fn e(&self, gamma: f64) -> Vec<f64> {
        let q = self.q(gamma);
        reflection_direction(&q)
    }
}

pub fn reflection_direction(q: &[f64]) -> Vec<f64> {
    let n = norm(q);
    if n < E_CUTOFF {
        vec![0.0; q.len()]
    } else {
        q.iter().map(|v| v / n).collect()
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Evaluates `rc(z, w)`; `sc = sqrt(1 - rc^2)`.
#[derive(Clone, Debug)]
pub struct RcEvaluator {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub d_k: f64,
    pub xi: f64,
    pub r_l: TwistedQuadratic,
    pub mode: CouplingMode,
}

impl RcEvaluator {
    pub fn new(spec: &ModelSpec, c: &MetricConstants, control: &CouplingControl) -> Self {
        RcEvaluator {
            gamma: spec.gamma,
            alpha: c.alpha,
            epsilon: c.epsilon,
            d_k: c.d_k,
            xi: control.xi,
            r_l: TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), c.tau),
            mode: control.mode,
        }
    }

    pub fn from_rho(rho: &RhoMetric, control: &CouplingControl) -> Self {
        RcEvaluator {
            gamma: rho.r_l.gamma,
            alpha: rho.alpha,
            epsilon: rho.epsilon,
            d_k: rho.d_k,
            xi: control.xi,
            r_l: rho.r_l.clone(),
            mode: control.mode,
        }
    }

    /// A coupling that is synchronous everywhere.
    pub fn synchronous(spec: &ModelSpec) -> Self {
        RcEvaluator {
            gamma: spec.gamma,
            alpha: 0.0,
            epsilon: 0.0,
            d_k: 0.0,
            xi: 1.0,
            r_l: TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), 0.0),
            mode: CouplingMode::Synchronous,
        }
    }

    pub fn delta(&self, z: &[f64], w: &[f64]) -> f64 {
        r_s_norm(self.alpha, self.gamma, z, w) - self.epsilon * self.r_l.norm(z, w)
    }

    pub fn rc(&self, z: &[f64], w: &[f64]) -> f64 {
        if self.mode == CouplingMode::Synchronous || !(self.d_k > 0.0) {
            return 0.0;
        }
        let mut qq = 0.0;
        for i in 0..z.len() {
            let q = z[i] + w[i] / self.gamma;
            qq += q * q;
        }
        let first = clamp01(qq.sqrt() / self.xi);
        if first == 0.0 {
            return 0.0;
        }
        first * clamp01((self.d_k + self.xi - self.delta(z, w)) / self.xi)
    }

    pub fn sc(&self, z: &[f64], w: &[f64]) -> f64 {
        let r = self.rc(z, w);
        (1.0 - r * r).max(0.0).sqrt()
    }
}

/// `rc` for the given model, constants and control.
pub fn rc_value(control: &CouplingControl, spec: &ModelSpec, c: &MetricConstants, z: &[f64], w: &[f64]) -> f64 {
    RcEvaluator::new(spec, c, control).rc(z, w)
}

/// `N` coupled pairs; pair `i` is `(first[i], second[i])` and both members
/// draw noise at the address `first.ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledEnsemble {
    pub first: Ensemble,
    pub second: Ensemble,
}

impl CoupledEnsemble {
    pub fn new(first: Ensemble, second: Ensemble) -> Result<Self, CouplingError> {
        if first.len() != second.len() {
            return Err(CouplingError::Length(first.len(), second.len()));
        }
        Ok(CoupledEnsemble { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn t(&self) -> f64 {
        self.first.t
    }

    pub fn pair(&self, i: usize) -> CoupledState {
        CoupledState::new(self.first.point(i), self.second.point(i))
    }

    /// Difference `(z, w)` of pair `i` written into the buffers.
    pub fn diff_into(&self, i: usize, z: &mut [f64], w: &mut [f64]) {
        let (a, b) = (self.first.x(i), self.second.x(i));
        let (c, d) = (self.first.y(i), self.second.y(i));
        for k in 0..z.len() {
            z[k] = a[k] - b[k];
            w[k] = c[k] - d[k];
        }
    }
}

/// Where the interaction mean of each copy is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawTerm {
    /// No interaction term.
    Ignore,
    /// Each copy interacts with its own ensemble.
    OwnEnsemble,
}

/// Steps coupled ensembles. Reuses its buffers across steps.
pub struct CoupledStepper<'a> {
    pub spec: &'a ModelSpec,
    pub coef: StepCoefficients,
    pub noise: NoiseSource,
    pub rc: RcEvaluator,
    pub law: LawTerm,
    force1: Vec<f64>,
    force2: Vec<f64>,
    sync: (Vec<f64>, Vec<f64>),
    refl: (Vec<f64>, Vec<f64>),
    /// `rc` of every pair at the start of the last step.
    pub last_rc: Vec<f64>,
}

impl<'a> CoupledStepper<'a> {
    pub fn new(spec: &'a ModelSpec, cfg: &IntegratorConfig, rc: RcEvaluator, law: LawTerm) -> Result<Self, CouplingError> {
        cfg.validate()?;
        Ok(CoupledStepper {
            spec,
            coef: StepCoefficients::from_config(spec, cfg),
            noise: cfg.noise_source(spec.dimension),
            rc,
            law,
            force1: Vec::new(),
            force2: Vec::new(),
            sync: (Vec::new(), Vec::new()),
            refl: (Vec::new(), Vec::new()),
            last_rc: Vec::new(),
        })
    }

    fn resize(&mut self, len: usize, n: usize) {
        if self.force1.len() != len {
            self.force1 = vec![0.0; len];
            self.force2 = vec![0.0; len];
            self.sync = (vec![0.0; len], vec![0.0; len]);
            self.refl = (vec![0.0; len], vec![0.0; len]);
        }
        self.last_rc.resize(n, 0.0);
    }

    /// One coupled step. `first_law` overrides the law sample of the first
    /// copies (used for a law proxy); otherwise `self.law` decides.
    pub fn step_with_law(&mut self, pairs: &mut CoupledEnsemble, first_law: Option<&[f64]>) -> Result<(), CouplingError> {
        let d = self.spec.dimension;
        let n = pairs.len();
        self.resize(n * d, n);
        let (law1, law2) = match self.law {
            LawTerm::Ignore => (None, None),
            LawTerm::OwnEnsemble => (Some(first_law.unwrap_or(&pairs.first.xs)), Some(&pairs.second.xs[..])),
        };
        drift_into(self.spec, &pairs.first.xs, law1, InteractionPath::Auto, &mut self.force1);
        drift_into(self.spec, &pairs.second.xs, law2, InteractionPath::Auto, &mut self.force2);
        draw_noise(&self.noise, CHANNEL_SYNC, &pairs.first, &mut self.sync.0, &mut self.sync.1);
        let reflecting = self.rc.mode != CouplingMode::Synchronous && self.rc.d_k > 0.0;
        if reflecting {
            draw_noise(&self.noise, CHANNEL_REFLECT, &pairs.first, &mut self.refl.0, &mut self.refl.1);
        }
        let coef = self.coef;
        let gamma = self.spec.gamma;
        let mut z = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut e = vec![0.0; d];
        for i in 0..n {
            let s = i * d..(i + 1) * d;
            let (xs1, ys1) = (&mut pairs.first.xs[s.clone()], &mut pairs.first.ys[s.clone()]);
            let (xs2, ys2) = (&mut pairs.second.xs[s.clone()], &mut pairs.second.ys[s.clone()]);
            let (f1, f2) = (&self.force1[s.clone()], &self.force2[s.clone()]);
            let (sx, se) = (&self.sync.0[s.clone()], &self.sync.1[s.clone()]);
            if !reflecting {
                self.last_rc[i] = 0.0;
                for k in 0..d {
                    coef.advance(&mut xs1[k], &mut ys1[k], f1[k], sx[k], se[k]);
                    coef.advance(&mut xs2[k], &mut ys2[k], f2[k], sx[k], se[k]);
                }
                continue;
            }
            for k in 0..d {
                z[k] = xs1[k] - xs2[k];
                w[k] = ys1[k] - ys2[k];
            }
            let rc = self.rc.rc(&z, &w);
            self.last_rc[i] = rc;
            let sc = (1.0 - rc * rc).max(0.0).sqrt();
            let mut qq = 0.0;
            for k in 0..d {
                e[k] = z[k] + w[k] / gamma;
                qq += e[k] * e[k];
            }
            let qn = qq.sqrt();
            if qn < E_CUTOFF {
                e.iter_mut().for_each(|v| *v = 0.0);
            } else {
                e.iter_mut().for_each(|v| *v /= qn);
            }
            let (rx, re) = (&self.refl.0[s.clone()], &self.refl.1[s.clone()]);
            let ex: f64 = e.iter().zip(rx).map(|(a, b)| a * b).sum();
            let ee: f64 = e.iter().zip(re).map(|(a, b)| a * b).sum();
            for k in 0..d {
                let xi1 = sc * sx[k] + rc * rx[k];
                let eta1 = sc * se[k] + rc * re[k];
                let xi2 = sc * sx[k] + rc * (rx[k] - 2.0 * e[k] * ex);
                let eta2 = sc * se[k] + rc * (re[k] - 2.0 * e[k] * ee);
                coef.advance(&mut xs1[k], &mut ys1[k], f1[k], xi1, eta1);
                coef.advance(&mut xs2[k], &mut ys2[k], f2[k], xi2, eta2);
            }
        }
        for ens in [&mut pairs.first, &mut pairs.second] {
            ens.step_index += 1;
            ens.t = ens.step_index as f64 * coef.h;
        }
        pairs.first.is_finite()?;
        pairs.second.is_finite()?;
        Ok(())
    }

    pub fn step(&mut self, pairs: &mut CoupledEnsemble) -> Result<(), CouplingError> {
        self.step_with_law(pairs, None)
    }
}

/// One step of a single coupled pair without interaction.
pub fn step_coupled_pair(
    spec: &ModelSpec,
    state: &CoupledState,
    rc: &RcEvaluator,
    cfg: &IntegratorConfig,
    step_index: u64,
    id: u64,
) -> Result<CoupledState, CouplingError> {
    let mut a = Ensemble::from_points(std::slice::from_ref(&state.first)).with_ids(vec![id]);
    let mut b = Ensemble::from_points(std::slice::from_ref(&state.second)).with_ids(vec![id]);
    a.step_index = step_index;
    b.step_index = step_index;
    let mut pairs = CoupledEnsemble::new(a, b)?;
    CoupledStepper::new(spec, cfg, rc.clone(), LawTerm::Ignore)?.step(&mut pairs)?;
    Ok(pairs.pair(0))
}

/// Componentwise coupling of `N` independent copies of the nonlinear process
/// (first components, interacting with a law proxy) and the `N`-particle
/// system (second components).
pub struct ComponentwiseCoupling<'a> {
    pub pairs: CoupledStepper<'a>,
    proxy_coef: StepCoefficients,
    proxy_noise: NoiseSource,
    proxy_force: Vec<f64>,
    proxy_noise_buf: (Vec<f64>, Vec<f64>),
}

impl<'a> ComponentwiseCoupling<'a> {
    pub fn new(spec: &'a ModelSpec, cfg: &IntegratorConfig, rc: RcEvaluator) -> Result<Self, CouplingError> {
        Ok(ComponentwiseCoupling {
            pairs: CoupledStepper::new(spec, cfg, rc, LawTerm::OwnEnsemble)?,
            proxy_coef: StepCoefficients::from_config(spec, cfg),
            proxy_noise: cfg.noise_source(spec.dimension),
            proxy_force: Vec::new(),
            proxy_noise_buf: (Vec::new(), Vec::new()),
        })
    }

    /// Advances the law proxy by one step (noise on its own channel).
    pub fn step_proxy(&mut self, proxy: &mut Ensemble) -> Result<(), CouplingError> {
        if proxy.len() < 2 {
            return Err(DynamicsError::ProxyTooSmall(proxy.len()).into());
        }
        let len = proxy.xs.len();
        if self.proxy_force.len() != len {
            self.proxy_force = vec![0.0; len];
            self.proxy_noise_buf = (vec![0.0; len], vec![0.0; len]);
        }
        let spec = self.pairs.spec;
        drift_into(spec, &proxy.xs, Some(&proxy.xs), InteractionPath::Auto, &mut self.proxy_force);
        draw_noise(&self.proxy_noise, CHANNEL_PROXY, proxy, &mut self.proxy_noise_buf.0, &mut self.proxy_noise_buf.1);
        for k in 0..len {
            self.proxy_coef
                .advance(&mut proxy.xs[k], &mut proxy.ys[k], self.proxy_force[k], self.proxy_noise_buf.0[k], self.proxy_noise_buf.1[k]);
        }
        proxy.step_index += 1;
        proxy.t = proxy.step_index as f64 * self.proxy_coef.h;
        Ok(proxy.is_finite()?)
    }

    /// One step: pairs first (against the proxy at the current time), then
    /// the proxy.
    pub fn step(&mut self, pairs: &mut CoupledEnsemble, proxy: &mut Ensemble) -> Result<(), CouplingError> {
        self.pairs.step_with_law(pairs, Some(&proxy.xs))?;
        self.step_proxy(proxy)
    }
}

pub fn step_coupled_componentwise(
    spec: &ModelSpec,
    pairs: &mut CoupledEnsemble,
    proxy: &mut Ensemble,
    rc: &RcEvaluator,
    cfg: &IntegratorConfig,
) -> Result<(), CouplingError> {
    ComponentwiseCoupling::new(spec, cfg, rc.clone())?.step(pairs, proxy)
}

/// One observable compared between a coupled component and an uncoupled run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalEntry {
    pub observable: String,
    pub coupled: f64,
    pub independent: f64,
    /// Standard error of the difference.
    pub se: f64,
    /// `|coupled - independent| / se`
    pub z_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalReport {
    pub entries: Vec<MarginalEntry>,
    /// Largest deviation allowed, in standard errors.
    pub threshold: f64,
    pub ok: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Compares means and second moments of every coordinate of `coupled`
/// against `independent` and flags deviations beyond 4 standard errors.
pub fn marginal_check(coupled: &Ensemble, independent: &Ensemble) -> MarginalReport {
    let d = coupled.dim;
    let threshold = 4.0;
    let mut entries = Vec::new();
    for (label, a, b) in [("x", &coupled.xs, &independent.xs), ("y", &coupled.ys, &independent.ys)] {
        for k in 0..d {
            let ca: Vec<f64> = a.iter().skip(k).step_by(d).copied().collect();
            let cb: Vec<f64> = b.iter().skip(k).step_by(d).copied().collect();
            for power in [1, 2] {
                let pa: Vec<f64> = ca.iter().map(|v| v.powi(power)).collect();
                let pb: Vec<f64> = cb.iter().map(|v| v.powi(power)).collect();
                let (ma, sa) = mean_se(&pa);
                let (mb, sb) = mean_se(&pb);
                let se = (sa * sa + sb * sb).sqrt();
                let diff = (ma - mb).abs();
                let z_score = if se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                let name = if power == 1 { format!("E[{label}{k}]") } else { format!("E[{label}{k}^2]") };
                entries.push(MarginalEntry { observable: name, coupled: ma, independent: mb, se, z_score });
            }
        }
    }
    let ok = entries.iter().all(|e| e.z_score <= threshold);
    MarginalReport { entries, threshold, ok }
}

/// Header of coupled-trajectory CSV files.
pub const COUPLED_CSV_HEADER: &str = "t,rs,rl,delta,rho,|Z|,|Q|,rc";

/// Ensemble means of the coupled-trajectory observables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoupledSummary {
    pub t: f64,
    pub rs: f64,
    pub rl: f64,
    pub delta: f64,
    pub rho: f64,
    pub abs_z: f64,
    pub abs_q: f64,
    pub rc: f64,
}

impl CoupledSummary {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{},{},{}", self.t, self.rs, self.rl, self.delta, self.rho, self.abs_z, self.abs_q, self.rc)
    }
}

pub fn summarize(pairs: &CoupledEnsemble, rho: &RhoMetric, rc: &RcEvaluator) -> CoupledSummary {
    let d = pairs.first.dim;
    let n = pairs.len() as f64;
    let mut z = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut s = CoupledSummary { t: pairs.t(), rs: 0.0, rl: 0.0, delta: 0.0, rho: 0.0, abs_z: 0.0, abs_q: 0.0, rc: 0.0 };
    for i in 0..pairs.len() {
        pairs.diff_into(i, &mut z, &mut w);
        let p = rho.parts(&z, &w);
        s.rs += p.rs;
        s.rl += p.rl;
        s.delta += p.delta;
        s.rho += p.rho;
        s.abs_z += norm(&z);
        let q: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a + b / rho.r_l.gamma).collect();
        s.abs_q += norm(&q);
        s.rc += rc.rc(&z, &w);
    }
    for v in [&mut s.rs, &mut s.rl, &mut s.delta, &mut s.rho, &mut s.abs_z, &mut s.abs_q, &mut s.rc] {
        *v /= n;
    }
    s
}
