//! Force fields with their structural splittings, and Monte Carlo checks of
//! the standing assumptions on them.
//!
//! The external force is written `b(x) = -K x + g(x)` with `K` symmetric
//! positive definite and `g` Lipschitz and monotone at distances `>= R`. The
//! interaction force `b~(x, z)` is Lipschitz in both arguments; the
//! unconfined kind is written `b~(x, z) = -K~(x - z) + g~(x - z)` with `g~`
//! odd.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm, MatrixSpec, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("non-finite input to force evaluation")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("analytic gradient of {kind} disagrees with finite differences (relative error {error:.3e})")]
    GradientCheck { kind: String, error: f64 },
    #[error("custom forces cannot be loaded from JSON")]
    CustomFromJson,
}

fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter { field: field.to_string(), reason: reason.into() }
}

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type PairField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Constants of the splitting `b(x) = -K x + g(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Splitting {
    #[serde(serialize_with = "ser_matrix")]
    pub k: SymMatrix,
    pub kappa: f64,
    pub l_k: f64,
    pub l_g: f64,
    pub r: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &SymMatrix, s: S) -> Result<S::Ok, S::Error> {
    m.rows().serialize(s)
}

#[derive(Clone)]
pub enum ExternalKind {
    /// `b = 0`, used for unconfined dynamics.
    Zero,
    Quadratic,
    /// One-dimensional double-well potential with splitting parameter `l`,
    /// so that `kappa = 3 beta (1 - l)`.
    DoubleWell { beta: f64, l: f64 },
    /// User supplied `b` with a declared splitting matrix; `g = b + K x`.
    Custom { name: String, b: VectorField },
}

impl fmt::Debug for ExternalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalKind::Zero => write!(f, "Zero"),
            ExternalKind::Quadratic => write!(f, "Quadratic"),
            ExternalKind::DoubleWell { beta, l } => write!(f, "DoubleWell {{ beta: {beta}, l: {l} }}"),
            ExternalKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExternalForce {
    pub kind: ExternalKind,
    pub splitting: Splitting,
}

/// Default splitting parameter for the double well, giving `kappa = 2 beta`.
pub const DOUBLE_WELL_DEFAULT_L: f64 = 1.0 / 3.0;

impl ExternalForce {
    pub fn zero(d: usize) -> Self {
        ExternalForce {
            kind: ExternalKind::Zero,
            splitting: Splitting { k: SymMatrix::scaled_identity(d, 0.0), kappa: 0.0, l_k: 0.0, l_g: 0.0, r: 0.0 },
        }
    }

    pub fn quadratic(k: SymMatrix) -> Result<Self, ModelError> {
        let ev = k.eigenvalues();
        let (kappa, l_k) = (ev[0], *ev.last().unwrap());
        if !(kappa > 0.0) || !l_k.is_finite() {
            return Err(invalid("external.k", "matrix must be symmetric positive definite"));
        }
        Ok(ExternalForce { kind: ExternalKind::Quadratic, splitting: Splitting { k, kappa, l_k, l_g: 0.0, r: 0.0 } })
    }

    pub fn double_well(beta: f64) -> Result<Self, ModelError> {
        Self::double_well_with_l(beta, DOUBLE_WELL_DEFAULT_L)
    }

    pub fn double_well_with_l(beta: f64, l: f64) -> Result<Self, ModelError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("external.beta", "must be positive"));
        }
        if !(l > 0.0 && l <= 0.5) {
            return Err(invalid("external.splitting_l", "must lie in (0, 1/2]"));
        }
        let kappa = 3.0 * beta * (1.0 - l);
        let splitting = Splitting {
            k: SymMatrix::scaled_identity(1, kappa),
            kappa,
            l_k: kappa,
            l_g: beta * (8.0 + 3.0 * l),
            r: double_well_radius(l),
        };
        Ok(ExternalForce { kind: ExternalKind::DoubleWell { beta, l }, splitting })
    }

    /// A custom force. The splitting constants are declared, not inferred;
    /// [`validate_assumptions`] can try to falsify them.
    pub fn custom(name: &str, b: VectorField, k: SymMatrix, l_g: f64, r: f64) -> Result<Self, ModelError> {
        let ev = k.eigenvalues();
        let (kappa, l_k) = (ev[0], *ev.last().unwrap());
        if !(kappa > 0.0) {
            return Err(invalid("external.k", "matrix must be symmetric positive definite"));
        }
        if !(l_g >= 0.0 && r >= 0.0) {
            return Err(invalid("external", "declared l_g and r must be non-negative"));
        }
        Ok(ExternalForce { kind: ExternalKind::Custom { name: name.to_string(), b }, splitting: Splitting { k, kappa, l_k, l_g, r } })
    }

    pub fn dim(&self) -> usize {
        self.splitting.k.dim()
    }

    /// `out = b(x)`.
    pub fn force_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ExternalKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            ExternalKind::Quadratic => {
                self.splitting.k.mul_into(x, out);
                out.iter_mut().for_each(|o| *o = -*o);
            }
            ExternalKind::DoubleWell { beta, .. } => {
                let s = x[0].abs();
                out[0] = if s <= 2.0 { -beta * (s * s - 1.0) * x[0] } else { -3.0 * beta * x[0] };
            }
            ExternalKind::Custom { b, .. } => b(x, out),
        }
    }

    /// `out = g(x)`, the non-linear part of the splitting.
    pub fn g_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ExternalKind::Zero | ExternalKind::Quadratic => out.iter_mut().for_each(|o| *o = 0.0),
            ExternalKind::DoubleWell { beta, .. } => {
                let kappa = self.splitting.kappa;
                let s = x[0].abs();
                out[0] = if s <= 2.0 {
                    -beta * (s * s - 1.0) * x[0] + kappa * x[0]
                } else {
                    (kappa - 3.0 * beta) * x[0]
                };
            }
            ExternalKind::Custom { b, .. } => {
                b(x, out);
                let mut kx = vec![0.0; x.len()];
                self.splitting.k.mul_into(x, &mut kx);
                out.iter_mut().zip(&kx).for_each(|(o, k)| *o += k);
            }
        }
    }

    /// Potential `V` with `b = -grad V`, when the kind has one.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ExternalKind::Zero => Some(0.0),
            ExternalKind::Quadratic => Some(0.5 * self.splitting.k.quad(x)),
            ExternalKind::DoubleWell { beta, .. } => {
                let s = x[0].abs();
                Some(if s <= 2.0 { beta * (s.powi(4) / 4.0 - s * s / 2.0) } else { beta * (1.5 * s * s - 4.0) })
            }
            ExternalKind::Custom { .. } => None,
        }
    }
}

/// Smallest `R` such that the double-well `g` is monotone (in the sense
/// `<g(x)-g(y), x-y> <= 0`) for all pairs at distance `>= R`, found by a grid
/// search over `[-10, 10]^2` with step 0.01 and rounded up by one step.
///
/// The result does not depend on `beta` since `g` is linear in it.
pub fn double_well_radius(l: f64) -> f64 {
    static DEFAULT: OnceLock<f64> = OnceLock::new();
    if l == DOUBLE_WELL_DEFAULT_L {
        return *DEFAULT.get_or_init(|| double_well_radius_search(l, 0.01, 10.0));
    }
    double_well_radius_search(l, 0.01, 10.0)
}

pub fn double_well_radius_search(l: f64, step: f64, half_width: f64) -> f64 {
    let force = ExternalForce {
        kind: ExternalKind::DoubleWell { beta: 1.0, l },
        splitting: Splitting {
            k: SymMatrix::scaled_identity(1, 3.0 * (1.0 - l)),
            kappa: 3.0 * (1.0 - l),
            l_k: 3.0 * (1.0 - l),
            l_g: 8.0 + 3.0 * l,
            r: 0.0,
        },
    };
    let n = (2.0 * half_width / step).round() as usize + 1;
    let xs: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * step).collect();
    let gs: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mut o = [0.0];
            force.g_into(&[x], &mut o);
            o[0]
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[j] - xs[i];
            if dx <= worst {
                continue;
            }
            if (gs[j] - gs[i]) * dx > 1e-12 {
                worst = dx;
            }
        }
    }
    worst + step
}

/// Odd perturbation for the unconfined interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    /// `g~(z)_i = amplitude * sin(frequency * z_i)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl Perturbation {
    pub fn lipschitz(&self) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::Sine { amplitude, frequency } => (amplitude * frequency).abs(),
        }
    }

    fn eval_add(&self, z: &[f64], out: &mut [f64]) {
        if let Perturbation::Sine { amplitude, frequency } = self {
            for (o, zi) in out.iter_mut().zip(z) {
                *o += amplitude * (frequency * zi).sin();
            }
        }
    }

    fn potential(&self, z: &[f64]) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::Sine { amplitude, frequency } => z.iter().map(|zi| amplitude / frequency * (frequency * zi).cos()).sum(),
        }
    }
}

/// Constants of the unconfined splitting `b~(x, z) = -K~(x - z) + g~(x - z)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnconfinedSplitting {
    #[serde(serialize_with = "ser_matrix")]
    pub k: SymMatrix,
    pub kappa: f64,
    pub l_k: f64,
    pub l_g: f64,
    pub perturbation: Perturbation,
}

#[derive(Clone)]
pub enum InteractionKind {
    None,
    /// `b~(x, z) = k z`.
    Linear { k: f64 },
    /// Minus the gradient of `k~ / (|x-z|^p + q^p)^(1/p)`.
    MollifiedCoulomb { k_tilde: f64, p: f64, q: f64 },
    /// Minus the gradient of `-2 log((|x-z|^p + q^p)^(1/p))`.
    MollifiedLog { p: f64, q: f64 },
    Unconfined(UnconfinedSplitting),
    Custom { name: String, f: PairField },
}

impl fmt::Debug for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionKind::None => write!(f, "None"),
            InteractionKind::Linear { k } => write!(f, "Linear {{ k: {k} }}"),
            InteractionKind::MollifiedCoulomb { k_tilde, p, q } => write!(f, "MollifiedCoulomb {{ k_tilde: {k_tilde}, p: {p}, q: {q} }}"),
            InteractionKind::MollifiedLog { p, q } => write!(f, "MollifiedLog {{ p: {p}, q: {q} }}"),
            InteractionKind::Unconfined(s) => write!(f, "Unconfined({s:?})"),
            InteractionKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InteractionForce {
    pub kind: InteractionKind,
    /// Declared Lipschitz constant `L~` (in each argument).
    pub lipschitz: f64,
}

impl InteractionForce {
    pub fn none() -> Self {
        InteractionForce { kind: InteractionKind::None, lipschitz: 0.0 }
    }

    pub fn linear(k: f64) -> Self {
        InteractionForce { kind: InteractionKind::Linear { k }, lipschitz: k.abs() }
    }

    pub fn mollified_coulomb(k_tilde: f64, p: f64, q: f64) -> Result<Self, ModelError> {
        check_mollifier(p, q)?;
        let kind = InteractionKind::MollifiedCoulomb { k_tilde, p, q };
        let lipschitz = radial_lipschitz(|r| k_tilde * coulomb_profile(r, p, q), q);
        let f = InteractionForce { kind, lipschitz };
        f.gradient_self_check("mollified_coulomb")?;
        Ok(f)
    }

    pub fn mollified_log(p: f64, q: f64) -> Result<Self, ModelError> {
        check_mollifier(p, q)?;
        let kind = InteractionKind::MollifiedLog { p, q };
        let lipschitz = radial_lipschitz(|r| log_profile(r, p, q), q);
        let f = InteractionForce { kind, lipschitz };
        f.gradient_self_check("mollified_log")?;
        Ok(f)
    }

    pub fn unconfined(k: SymMatrix, perturbation: Perturbation) -> Result<Self, ModelError> {
        let ev = k.eigenvalues();
        let (kappa, l_k) = (ev[0], *ev.last().unwrap());
        if !(kappa > 0.0) {
            return Err(invalid("interaction.k_tilde", "matrix must be symmetric positive definite"));
        }
        if let Perturbation::Sine { frequency, amplitude } = &perturbation {
            if !(*frequency != 0.0 && frequency.is_finite() && amplitude.is_finite()) {
                return Err(invalid("interaction.perturbation", "frequency must be non-zero and finite"));
            }
        }
        let l_g = perturbation.lipschitz();
        let s = UnconfinedSplitting { k, kappa, l_k, l_g, perturbation };
        Ok(InteractionForce { kind: InteractionKind::Unconfined(s), lipschitz: l_k + l_g })
    }

    pub fn custom(name: &str, f: PairField, lipschitz: f64) -> Self {
        InteractionForce { kind: InteractionKind::Custom { name: name.to_string(), f }, lipschitz }
    }

    /// Replaces the declared Lipschitz constant.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = l;
        self
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, InteractionKind::None)
    }

    pub fn unconfined_splitting(&self) -> Option<&UnconfinedSplitting> {
        match &self.kind {
            InteractionKind::Unconfined(s) => Some(s),
            _ => None,
        }
    }

    /// `out = b~(x, z)`.
    pub fn force_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.kind {
            InteractionKind::None => out.iter_mut().for_each(|o| *o = 0.0),
            InteractionKind::Linear { k } => out.iter_mut().zip(z).for_each(|(o, zi)| *o = k * zi),
            InteractionKind::MollifiedCoulomb { k_tilde, p, q } => {
                let v: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                let a = k_tilde * coulomb_profile(norm(&v), *p, *q);
                out.iter_mut().zip(&v).for_each(|(o, vi)| *o = a * vi);
            }
            InteractionKind::MollifiedLog { p, q } => {
                let v: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                let a = log_profile(norm(&v), *p, *q);
                out.iter_mut().zip(&v).for_each(|(o, vi)| *o = a * vi);
            }
            InteractionKind::Unconfined(s) => {
                let v: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                s.k.mul_into(&v, out);
                out.iter_mut().for_each(|o| *o = -*o);
                s.perturbation.eval_add(&v, out);
            }
            InteractionKind::Custom { f, .. } => f(x, z, out),
        }
    }

    /// Pair potential `W(x, z)` with `b~ = -grad_x W`, when one exists.
    pub fn potential(&self, x: &[f64], z: &[f64]) -> Option<f64> {
        let v: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
        let r = norm(&v);
        match &self.kind {
            InteractionKind::None => Some(0.0),
            InteractionKind::Linear { k } => Some(-k * crate::linalg::dot(x, z)),
            InteractionKind::MollifiedCoulomb { k_tilde, p, q } => Some(k_tilde / (r.powf(*p) + q.powf(*p)).powf(1.0 / p)),
            InteractionKind::MollifiedLog { p, q } => Some(-2.0 / p * (r.powf(*p) + q.powf(*p)).ln()),
            InteractionKind::Unconfined(s) => Some(0.5 * s.k.quad(&v) + s.perturbation.potential(&v)),
            InteractionKind::Custom { .. } => None,
        }
    }

    fn gradient_self_check(&self, kind: &str) -> Result<(), ModelError> {
        let q = match self.kind {
            InteractionKind::MollifiedCoulomb { q, .. } | InteractionKind::MollifiedLog { q, .. } => q,
            _ => 1.0,
        };
        for &r in &[0.3 * q, q, 2.5 * q] {
            let err = gradient_error_interaction(self, &[r], &[0.0]);
            if err > 1e-6 {
                return Err(ModelError::GradientCheck { kind: kind.to_string(), error: err });
            }
        }
        Ok(())
    }
}

fn check_mollifier(p: f64, q: f64) -> Result<(), ModelError> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(invalid("interaction.p", "must be >= 2"));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(invalid("interaction.q", "must be positive (q = 0 is singular)"));
    }
    Ok(())
}

/// `a(r)` with `-grad_x W = k~ a(|v|) v` for the mollified Coulomb kernel.
fn coulomb_profile(r: f64, p: f64, q: f64) -> f64 {
    let s = r.powf(p) + q.powf(p);
    let rp2 = if p == 2.0 { 1.0 } else { r.powf(p - 2.0) };
    s.powf(-1.0 / p - 1.0) * rp2
}

fn log_profile(r: f64, p: f64, q: f64) -> f64 {
    let s = r.powf(p) + q.powf(p);
    let rp2 = if p == 2.0 { 1.0 } else { r.powf(p - 2.0) };
    2.0 * rp2 / s
}

/// Lipschitz constant of `v -> a(|v|) v`: the supremum over `r` of the
/// Jacobian eigenvalues `a(r)` and `(r a(r))'`, scanned on a fine grid and
/// inflated by a relative margin of 1e-6.
fn radial_lipschitz<F: Fn(f64) -> f64>(a: F, q: f64) -> f64 {
    let n = 200_000;
    let r_max = 60.0 * q;
    let hr = r_max / n as f64;
    let mut best = 0.0f64;
    for i in 0..=n {
        let r = i as f64 * hr;
        let ar = a(r);
        let h = 1e-6 * q;
        let rl = (r - h).max(0.0);
        let radial = ((r + h) * a(r + h) - rl * a(rl)) / (r + h - rl);
        best = best.max(ar.abs()).max(radial.abs());
    }
    best * (1.0 + 1e-6)
}

/// Maximum over components of the gradient error of the external force
/// against central differences of the potential, relative to `max(|b|, 1)`.
pub fn gradient_error_external(f: &ExternalForce, x: &[f64]) -> f64 {
    let d = x.len();
    let mut b = vec![0.0; d];
    f.force_into(x, &mut b);
    let scale = norm(&b).max(1.0);
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..d {
        let h = 1e-5 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let vp = f.potential(&xp).unwrap_or(f64::NAN);
        xp[i] = x[i] - h;
        let vm = f.potential(&xp).unwrap_or(f64::NAN);
        xp[i] = x[i];
        let fd = -(vp - vm) / (2.0 * h);
        worst = worst.max((fd - b[i]).abs() / scale);
    }
    worst
}

pub fn gradient_error_interaction(f: &InteractionForce, x: &[f64], z: &[f64]) -> f64 {
    let d = x.len();
    let mut b = vec![0.0; d];
    f.force_into(x, z, &mut b);
    let scale = norm(&b).max(1.0);
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..d {
        let h = 1e-5 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let vp = f.potential(&xp, z).unwrap_or(f64::NAN);
        xp[i] = x[i] - h;
        let vm = f.potential(&xp, z).unwrap_or(f64::NAN);
        xp[i] = x[i];
        let fd = -(vp - vm) / (2.0 * h);
        worst = worst.max((fd - b[i]).abs() / scale);
    }
    worst
}

/// Validated model: forces plus friction `gamma`, inverse mass `u` and
/// dimension.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dimension: usize,
    pub gamma: f64,
    pub u: f64,
    pub external: ExternalForce,
    pub interaction: InteractionForce,
}

impl ModelSpec {
    pub fn new(dimension: usize, gamma: f64, u: f64, external: ExternalForce, interaction: InteractionForce) -> Result<Self, ModelError> {
        if dimension == 0 {
            return Err(invalid("dimension", "must be >= 1"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(u > 0.0 && u.is_finite()) {
            return Err(invalid("u", "must be positive"));
        }
        if external.dim() != dimension {
            return Err(invalid("external", format!("force has dimension {} but model has {dimension}", external.dim())));
        }
        if let Some(s) = interaction.unconfined_splitting() {
            if s.k.dim() != dimension {
                return Err(invalid("interaction.k_tilde", "matrix size does not match dimension"));
            }
        }
        Ok(ModelSpec { dimension, gamma, u, external, interaction })
    }

    pub fn eval_external(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dimension];
        self.external.force_into(x, &mut out);
        Ok(out)
    }

    pub fn eval_interaction(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_point(x)?;
        self.check_point(z)?;
        let mut out = vec![0.0; self.dimension];
        self.interaction.force_into(x, z, &mut out);
        Ok(out)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dimension {
            return Err(ModelError::Dimension { expected: self.dimension, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    pub fn is_unconfined(&self) -> bool {
        matches!(self.external.kind, ExternalKind::Zero) && self.interaction.unconfined_splitting().is_some()
    }
}

// ---------------------------------------------------------------------------
// JSON document form

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalDoc {
    Zero,
    Quadratic {
        k: MatrixSpec,
    },
    DoubleWell {
        beta: f64,
        #[serde(default = "default_l")]
        splitting_l: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<f64>,
    },
    /// Serialized summary of a custom force; cannot be deserialized into a
    /// working model.
    Custom {
        name: String,
        k: MatrixSpec,
        l_g: f64,
        r: f64,
    },
}

fn default_l() -> f64 {
    DOUBLE_WELL_DEFAULT_L
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionDoc {
    None,
    Linear {
        k: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    MollifiedCoulomb {
        k_tilde: f64,
        p: f64,
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    MollifiedLog {
        p: f64,
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    Unconfined {
        k_tilde: MatrixSpec,
        #[serde(default = "no_perturbation")]
        perturbation: Perturbation,
    },
    Custom {
        name: String,
        lipschitz: f64,
    },
}

fn no_perturbation() -> Perturbation {
    Perturbation::None
}

fn no_interaction() -> InteractionDoc {
    InteractionDoc::None
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub dimension: usize,
    pub gamma: f64,
    pub u: f64,
    pub external: ExternalDoc,
    #[serde(default = "no_interaction")]
    pub interaction: InteractionDoc,
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = ModelError;

    fn try_from(doc: ModelDoc) -> Result<Self, ModelError> {
        let d = doc.dimension;
        let external = match &doc.external {
            ExternalDoc::Zero => ExternalForce::zero(d),
            ExternalDoc::Quadratic { k } => ExternalForce::quadratic(k.build(d).map_err(|e| invalid("external.k", e))?)?,
            ExternalDoc::DoubleWell { beta, splitting_l, r } => {
                if d != 1 {
                    return Err(invalid("external", "double_well is one-dimensional"));
                }
                let mut f = ExternalForce::double_well_with_l(*beta, *splitting_l)?;
                if let Some(r) = r {
                    f.splitting.r = *r;
                }
                f
            }
            ExternalDoc::Custom { .. } => return Err(ModelError::CustomFromJson),
        };
        let interaction = match &doc.interaction {
            InteractionDoc::None => InteractionForce::none(),
            InteractionDoc::Linear { k, lipschitz } => {
                let f = InteractionForce::linear(*k);
                match lipschitz {
                    Some(l) => f.with_lipschitz(*l),
                    None => f,
                }
            }
            InteractionDoc::MollifiedCoulomb { k_tilde, p, q, lipschitz } => {
                let f = InteractionForce::mollified_coulomb(*k_tilde, *p, *q)?;
                match lipschitz {
                    Some(l) => f.with_lipschitz(*l),
                    None => f,
                }
            }
            InteractionDoc::MollifiedLog { p, q, lipschitz } => {
                let f = InteractionForce::mollified_log(*p, *q)?;
                match lipschitz {
                    Some(l) => f.with_lipschitz(*l),
                    None => f,
                }
            }
            InteractionDoc::Unconfined { k_tilde, perturbation } => InteractionForce::unconfined(
                k_tilde.build(d).map_err(|e| invalid("interaction.k_tilde", e))?,
                perturbation.clone(),
            )?,
            InteractionDoc::Custom { .. } => return Err(ModelError::CustomFromJson),
        };
        ModelSpec::new(d, doc.gamma, doc.u, external, interaction)
    }
}

impl From<&ModelSpec> for ModelDoc {
    fn from(m: &ModelSpec) -> Self {
        let s = &m.external.splitting;
        let external = match &m.external.kind {
            ExternalKind::Zero => ExternalDoc::Zero,
            ExternalKind::Quadratic => ExternalDoc::Quadratic { k: matrix_doc(&s.k) },
            ExternalKind::DoubleWell { beta, l } => ExternalDoc::DoubleWell { beta: *beta, splitting_l: *l, r: Some(s.r) },
            ExternalKind::Custom { name, .. } => ExternalDoc::Custom { name: name.clone(), k: matrix_doc(&s.k), l_g: s.l_g, r: s.r },
        };
        let lip = m.interaction.lipschitz;
        let interaction = match &m.interaction.kind {
            InteractionKind::None => InteractionDoc::None,
            InteractionKind::Linear { k } => InteractionDoc::Linear { k: *k, lipschitz: (lip != k.abs()).then_some(lip) },
            InteractionKind::MollifiedCoulomb { k_tilde, p, q } => {
                InteractionDoc::MollifiedCoulomb { k_tilde: *k_tilde, p: *p, q: *q, lipschitz: Some(lip) }
            }
            InteractionKind::MollifiedLog { p, q } => InteractionDoc::MollifiedLog { p: *p, q: *q, lipschitz: Some(lip) },
            InteractionKind::Unconfined(u) => InteractionDoc::Unconfined { k_tilde: matrix_doc(&u.k), perturbation: u.perturbation.clone() },
            InteractionKind::Custom { name, .. } => InteractionDoc::Custom { name: name.clone(), lipschitz: lip },
        };
        ModelDoc { dimension: m.dimension, gamma: m.gamma, u: m.u, external, interaction }
    }
}

fn matrix_doc(k: &SymMatrix) -> MatrixSpec {
    match k.is_scaled_identity() {
        Some(s) => MatrixSpec::Scalar(s),
        None => MatrixSpec::Rows(k.rows()),
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(d)?;
        ModelSpec::try_from(doc).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Assumption checks

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MatrixNotPositiveDefinite,
    SplittingMismatch,
    LipschitzG,
    Monotonicity,
    InteractionLipschitz,
    Antisymmetry,
    UnconfinedSplitting,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the first sample that exhibited the violation.
    pub sample: usize,
    pub observed: f64,
    pub declared: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
    pub max_splitting_residual: f64,
    pub max_lipschitz_ratio_g: f64,
    /// Largest `<g(x)-g(y), x-y> / |x-y|^2` over pairs with `|x-y| >= R`.
    pub max_monotonicity_violation: f64,
    pub max_interaction_ratio: f64,
    pub max_antisymmetry_residual: f64,
}

impl AssumptionReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn record(&mut self, kind: ViolationKind, sample: usize, observed: f64, declared: f64) {
        if !self.violations.iter().any(|v| v.kind == kind) {
            self.violations.push(Violation { kind, sample, observed, declared });
        }
    }
}

/// Monte Carlo falsification of the declared constants. A clean report only
/// means no sample contradicted them.
pub fn validate_assumptions(spec: &ModelSpec, samples: usize, seed: u64) -> AssumptionReport {
    let d = spec.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = AssumptionReport { samples, ..Default::default() };
    let ext = &spec.external;
    let split = &ext.splitting;
    let tol = 1e-9;

    if !matches!(ext.kind, ExternalKind::Zero) {
        let ev = split.k.eigenvalues();
        if !(ev[0] > 0.0) || split.kappa > split.l_k || (ev[0] - split.kappa).abs() > 1e-9 * (1.0 + ev[0].abs()) {
            rep.record(ViolationKind::MatrixNotPositiveDefinite, 0, ev[0], split.kappa);
        }
    }

    let box_half = 10.0f64.max(3.0 * split.r);
    let sample_point = |rng: &mut ChaCha8Rng, half: f64| -> Vec<f64> { (0..d).map(|_| rng.gen_range(-half..half)).collect() };
    let mut bx = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let mut kx = vec![0.0; d];
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut w1 = vec![0.0; d];
    let mut w2 = vec![0.0; d];

    for s in 0..samples {
        let x = sample_point(&mut rng, box_half);
        // splitting reproduces b
        ext.force_into(&x, &mut bx);
        ext.g_into(&x, &mut gx);
        split.k.mul_into(&x, &mut kx);
        let resid: f64 = (0..d).map(|i| (bx[i] - (-kx[i] + gx[i])).abs()).fold(0.0, f64::max) / (1.0 + norm(&bx));
        rep.max_splitting_residual = rep.max_splitting_residual.max(resid);
        if resid > tol {
            rep.record(ViolationKind::SplittingMismatch, s, resid, 0.0);
        }

        // Lipschitz constant of g on a nearby pair and a distant pair
        let scale = if s % 2 == 0 { 1e-2 } else { box_half };
        let xb: Vec<f64> = x.iter().map(|xi| xi + rng.gen_range(-scale..scale)).collect();
        ext.g_into(&x, &mut g1);
        ext.g_into(&xb, &mut g2);
        let dx: Vec<f64> = x.iter().zip(&xb).map(|(a, b)| a - b).collect();
        let dist = norm(&dx);
        if dist > 0.0 {
            let dg: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
            let ratio = norm(&dg) / dist;
            rep.max_lipschitz_ratio_g = rep.max_lipschitz_ratio_g.max(ratio);
            if ratio > split.l_g * (1.0 + tol) + tol {
                rep.record(ViolationKind::LipschitzG, s, ratio, split.l_g);
            }
        }

        // monotonicity beyond R
        let dir = unit_vector(&mut rng, d);
        let len = split.r.max(1e-3) * (1.0 + rng.gen_range(0.0..2.0));
        let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, e)| a + len * e).collect();
        ext.g_into(&xm, &mut g2);
        let inner: f64 = (0..d).map(|i| (g1[i] - g2[i]) * (x[i] - xm[i])).sum::<f64>() / (len * len);
        if inner > rep.max_monotonicity_violation {
            rep.max_monotonicity_violation = inner;
        }
        if inner > tol {
            rep.record(ViolationKind::Monotonicity, s, inner, split.r);
        }

        // interaction Lipschitz constant
        if !spec.interaction.is_none() {
            let y = sample_point(&mut rng, box_half);
            let iscale = if s % 2 == 0 { 0.5 } else { box_half };
            // alternate between moving the second argument, the first, and both
            let (mx, my) = [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0)][s % 3];
            let xp: Vec<f64> = x.iter().map(|v| v + mx * rng.gen_range(-iscale..iscale)).collect();
            let yp: Vec<f64> = y.iter().map(|v| v + my * rng.gen_range(-iscale..iscale)).collect();
            spec.interaction.force_into(&x, &y, &mut w1);
            spec.interaction.force_into(&xp, &yp, &mut w2);
            let num = norm(&crate::linalg::sub(&w1, &w2));
            let den = norm(&crate::linalg::sub(&x, &xp)) + norm(&crate::linalg::sub(&y, &yp));
            if den > 0.0 {
                let ratio = num / den;
                rep.max_interaction_ratio = rep.max_interaction_ratio.max(ratio);
                if ratio > spec.interaction.lipschitz * (1.0 + tol) + tol {
                    rep.record(ViolationKind::InteractionLipschitz, s, ratio, spec.interaction.lipschitz);
                }
            }
            if let Some(us) = spec.interaction.unconfined_splitting() {
                let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
                let mz: Vec<f64> = z.iter().map(|v| -v).collect();
                let mut p1 = vec![0.0; d];
                let mut p2 = vec![0.0; d];
                let zero = vec![0.0; d];
                us.perturbation.eval_add(&z, &mut p1);
                us.perturbation.eval_add(&mz, &mut p2);
                let anti = (0..d).map(|i| (p1[i] + p2[i]).abs()).fold(0.0, f64::max);
                rep.max_antisymmetry_residual = rep.max_antisymmetry_residual.max(anti);
                if anti > tol {
                    rep.record(ViolationKind::Antisymmetry, s, anti, 0.0);
                }
                let mut kz = vec![0.0; d];
                us.k.mul_into(&z, &mut kz);
                let mut direct = vec![0.0; d];
                spec.interaction.force_into(&z, &zero, &mut direct);
                let resid = (0..d).map(|i| (w1[i] - (-kz[i] + p1[i])).abs().max((direct[i] - w1[i]).abs())).fold(0.0, f64::max);
                if resid > tol * (1.0 + norm(&w1)) {
                    rep.record(ViolationKind::UnconfinedSplitting, s, resid, 0.0);
                }
            }
        }
    }
    rep
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|a| a / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dw() -> ModelSpec {
        ModelSpec::new(1, 10.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap()
    }

    #[test]
    fn double_well_values() {
        let m = dw();
        assert_eq!(m.eval_external(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(m.eval_external(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(m.eval_external(&[3.0]).unwrap(), vec![-9.0]);
        let s = &m.external.splitting;
        assert_eq!((s.kappa, s.l_k, s.l_g), (2.0, 2.0, 9.0));
    }

    #[test]
    fn double_well_radius_is_three() {
        // g is odd and vanishes at +-sqrt(3); the widest pair with an
        // increasing secant is (-sqrt(3), sqrt(3)).
        let r = double_well_radius(DOUBLE_WELL_DEFAULT_L);
        assert!((r - 2.0 * 3f64.sqrt()).abs() < 0.011, "r = {r}");
    }

    #[test]
    fn linear_interaction_value() {
        let m = ModelSpec::new(1, 1.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(), InteractionForce::linear(0.5)).unwrap();
        assert_eq!(m.eval_interaction(&[7.0], &[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn coulomb_coincident_points() {
        let f = InteractionForce::mollified_coulomb(1.0, 2.0, 1.0).unwrap();
        let mut out = [1.0];
        f.force_into(&[0.4], &[0.4], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn coulomb_matches_finite_difference() {
        let f = InteractionForce::mollified_coulomb(1.0, 2.0, 1.0).unwrap();
        let mut out = [0.0];
        f.force_into(&[1.0], &[0.0], &mut out);
        let w = |x: f64| 1.0 / (x * x + 1.0).sqrt();
        let h = 1e-6;
        let fd = -(w(1.0 + h) - w(1.0 - h)) / (2.0 * h);
        assert!((out[0] - fd).abs() < 1e-8);
        // p = 2, q = 1: sup of |d/dr (r / (r^2+1)^{3/2})| is 1 at r = 0
        assert!((f.lipschitz - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mollifier_rejects_zero_q() {
        assert!(InteractionForce::mollified_log(2.0, 0.0).is_err());
        assert!(InteractionForce::mollified_coulomb(1.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(dw().eval_external(&[f64::NAN]), Err(ModelError::NonFinite));
    }

    #[test]
    fn validation_reports() {
        let rep = validate_assumptions(&dw(), 2000, 1);
        assert!(rep.ok(), "{:?}", rep.violations);
        let quad = ModelSpec::new(2, 1.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(2)).unwrap(), InteractionForce::none()).unwrap();
        assert!(validate_assumptions(&quad, 500, 2).ok());
        let bad = ModelSpec::new(
            1,
            1.0,
            1.0,
            ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(),
            InteractionForce::linear(2.0).with_lipschitz(1.0),
        )
        .unwrap();
        let rep = validate_assumptions(&bad, 100, 3);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::InteractionLipschitz);
        assert_eq!(rep.violations[0].sample, 0);
    }

    #[test]
    fn shrunken_radius_is_falsified() {
        let mut m = dw();
        m.external.splitting.r = 1.0;
        let rep = validate_assumptions(&m, 5000, 4);
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::Monotonicity));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"dimension":1,"gamma":10,"u":1,"external":{"kind":"double_well","beta":1}}"#;
        let m: ModelSpec = serde_json::from_str(text).unwrap();
        assert_eq!(m.external.splitting.l_g, 9.0);
        let back = serde_json::to_string(&m).unwrap();
        let m2: ModelSpec = serde_json::from_str(&back).unwrap();
        assert_eq!(m2.external.splitting, m.external.splitting);
    }
}
