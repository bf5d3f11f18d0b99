//! Derived constants of the metrics and contraction rates.
//!
//! Every field of [`MetricConstants`] is an `f64`; a value that is not defined
//! for the model at hand (for example everything built from `tau` when the
//! friction is too small) is `NaN` and serializes as `null`.

pub mod profile;
pub mod supremum;

use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

pub use profile::ConcaveProfile;
pub use supremum::{Ratio, RatioProblem, SupOptions, Supremum};

use crate::metrics::TwistedQuadratic;
use crate::model::{ExternalKind, InteractionKind, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConstantsError {
    #[error("computed R1 = {r1} lies outside [{lower}, {upper}]")]
    BracketViolation { r1: f64, lower: f64, upper: f64 },
}

/// A failed admissibility condition. Constants are still computed where they
/// are defined.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// `L_g u / gamma^2 < kappa / (2 L_g)` fails.
    FrictionTooSmall { gamma: f64, min_gamma: f64 },
    /// The interaction Lipschitz constant exceeds the admissible cap.
    InteractionTooStrong { max_lipschitz: f64, declared: f64 },
    /// The odd perturbation of an unconfined interaction is too large for the
    /// L1 (and possibly the L2) contraction statement.
    UnconfinedPerturbationTooStrong { max_l1: f64, max_l2: f64, declared: f64 },
    /// Neither a confining external force nor an unconfined interaction.
    NoConfinement,
}

fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_none()
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

macro_rules! constants_struct {
    ($(#[$m:meta])* pub struct $name:ident { $($(#[$fm:meta])* $f:ident),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Serialize)]
        pub struct $name {
            $($(#[$fm])* #[serde(serialize_with = "ser_f64")] pub $f: f64,)*
            /// `R = 0`: the glued metric is `r_l` and the profile is the identity.
            pub degenerate: bool,
            /// All admissibility conditions relevant to the model hold.
            pub admissible: bool,
        }

        impl $name {
            fn undefined() -> Self {
                $name { $($f: f64::NAN,)* degenerate: false, admissible: false }
            }
        }
    };
}

constants_struct! {
    pub struct MetricConstants {
        lambda,
        tau,
        sigma,
        alpha,
        epsilon,
        /// The constant bounding `r_s` by `r_l` from below (`E r_s <= r_l`).
        cal_e,
        /// `(L_K + L_g) R1^2 / 4`
        big_lambda,
        /// The rate ingredient `E`.
        e_rate,
        /// Squared radius of the compact set on which `r_l^2` is bounded.
        script_r,
        d_k,
        d_k_error,
        r1,
        r1_error,
        /// `sup r_s / r_l` and `sup r_l / r_s` over phase-space directions.
        sup_rs_over_rl,
        sup_rl_over_rs,
        /// Closed-form bracket for `R1`.
        r1_lower,
        r1_upper,
        /// The same bracket with the upper constant rederived from `E`.
        r1_upper_derived,
        c_hat,
        log_c_hat,
        c_strong,
        c_classical,
        log_c_classical,
        /// Rate read off the profile before the final lower bounds.
        c_profile,
        c_nonlinear,
        c_chaos,
        c_hat_unconfined,
        /// Largest admissible interaction Lipschitz constant.
        max_interaction_lipschitz,
        /// Largest admissible unconfined perturbation constant (L2 and L1 statements).
        max_unconfined_l2,
        max_unconfined_l1,
        m,
        m1,
        log_m1,
        m2,
        log_m2,
        m3,
        m4,
        c1,
        c2,
    }
}

/// Constants together with the profile and any failed conditions.
#[derive(Clone, Debug)]
pub struct Derivation {
    pub constants: MetricConstants,
    pub profile: Option<Arc<ConcaveProfile>>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Derivation {
    pub fn is_admissible(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// `r_l` for the model with the given `tau`.
pub fn r_l_form(spec: &ModelSpec, tau: f64) -> TwistedQuadratic {
    TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), tau)
}

/// Sup of `Delta = r_s - eps r_l` over `{r_l^2 <= R}`, via the sup of
/// `r_s / r_l` over directions. The result carries the error bar of the
/// direction search.
pub fn compute_d_k(spec: &ModelSpec, c: &MetricConstants, opts: &SupOptions) -> (Supremum, Supremum) {
    if c.script_r == 0.0 {
        return (Supremum::exact(0.0), Supremum::exact(f64::NAN));
    }
    let rl = r_l_form(spec, c.tau);
    let s = RatioProblem { r_l: &rl, alpha: c.alpha, ratio: Ratio::SmallOverLarge }.supremum(opts);
    let root = c.script_r.sqrt();
    let d = Supremum {
        value: root * (s.value - c.epsilon),
        error_bar: root * s.error_bar,
        optimizer_value: root * (s.optimizer_value - c.epsilon),
        grid_value: s.grid_value.map(|g| root * (g - c.epsilon)),
        converged: s.converged,
    };
    (d, s)
}

/// Sup of `r_s` over `{Delta <= D_K}`. Along a ray the constraint binds at
/// `r_s = D_K / (1 - eps r_l / r_s)`, so the sup follows from the sup of
/// `r_l / r_s` over directions.
pub fn compute_r1(spec: &ModelSpec, c: &MetricConstants, opts: &SupOptions) -> (Supremum, Supremum) {
    if c.d_k == 0.0 {
        return (Supremum::exact(0.0), Supremum::exact(f64::NAN));
    }
    let rl = r_l_form(spec, c.tau);
    let t = RatioProblem { r_l: &rl, alpha: c.alpha, ratio: Ratio::LargeOverSmall }.supremum(opts);
    let r1_of = |tv: f64| c.d_k / (1.0 - c.epsilon * tv);
    let value = r1_of(t.value);
    // error from both the ratio search and D_K
    let err_t = r1_of(t.value + t.error_bar) - value;
    let err_d = c.d_k_error / (1.0 - c.epsilon * t.value);
    let r = Supremum {
        value,
        error_bar: err_t.max(0.0) + err_d,
        optimizer_value: r1_of(t.optimizer_value),
        grid_value: t.grid_value.map(r1_of),
        converged: t.converged,
    };
    (r, t)
}

pub fn derive_constants(spec: &ModelSpec) -> Result<Derivation, ConstantsError> {
    derive_constants_with(spec, &SupOptions::default())
}

pub fn derive_constants_with(spec: &ModelSpec, opts: &SupOptions) -> Result<Derivation, ConstantsError> {
    let mut c = MetricConstants::undefined();
    let mut diagnostics = Vec::new();
    let (gamma, u) = (spec.gamma, spec.u);

    let unconfined = spec.interaction.unconfined_splitting();
    if let Some(s) = unconfined {
        let kt = s.kappa;
        c.sigma = (0.125f64).min(kt * u / (2.0 * gamma * gamma));
        c.c_hat_unconfined = (gamma / 16.0).min(kt * u / (4.0 * gamma));
        c.max_unconfined_l2 = (kt / u).sqrt() * (gamma / 2.0) * c.sigma;
        c.max_unconfined_l1 = (kt / u).sqrt() * (gamma / 4.0) * c.sigma;
        c.m3 = (s.l_k * u + gamma * gamma).sqrt().max(1.5f64.sqrt()) * (1.0 / (kt * u)).sqrt().max(2f64.sqrt());
        c.m4 = gamma * (2.0 / kt).sqrt().max(2.0);
        if s.l_g > c.max_unconfined_l1 {
            diagnostics.push(Diagnostic::UnconfinedPerturbationTooStrong {
                max_l1: c.max_unconfined_l1,
                max_l2: c.max_unconfined_l2,
                declared: s.l_g,
            });
        }
    }

    if matches!(spec.external.kind, ExternalKind::Zero) {
        if unconfined.is_none() {
            diagnostics.push(Diagnostic::NoConfinement);
        }
        c.admissible = diagnostics.is_empty();
        return Ok(Derivation { constants: c, profile: None, diagnostics });
    }

    let sp = &spec.external.splitting;
    let (kappa, l_k, l_g, big_r) = (sp.kappa, sp.l_k, sp.l_g, sp.r);
    let lsum = l_k + l_g;
    let g2 = gamma * gamma;

    c.lambda = (0.125f64).min(kappa * u / g2);
    c.c_strong = (gamma / 8.0).min(kappa * u / (2.0 * gamma));
    c.m = ((u * l_k + g2).max(1.5) * (1.0 / (u * kappa)).max(2.0)).sqrt();
    c.tau = (0.125f64).min(u * kappa / (2.0 * g2) - l_g * l_g * u * u / (g2 * g2));
    c.alpha = 2.0 * lsum * u / g2;
    c.epsilon = 0.5 * (1.0f64).min((2.0 / 3.0) * c.alpha * gamma / (l_k * u).sqrt()).min(c.alpha);
    c.cal_e = ((kappa * u).sqrt() / (gamma * 8f64.sqrt() * c.alpha)).min(0.5);
    c.e_rate = (1.0f64)
        .min(kappa.sqrt() * gamma / ((8.0 * u).sqrt() * lsum))
        .min((kappa * u / 2.0).sqrt() / gamma)
        .min(c.alpha)
        / 6.0;
    c.c2 = 2f64.sqrt() * (c.alpha + 1.0).max(1.0 / gamma);
    c.degenerate = big_r == 0.0;

    let friction_ok = 2.0 * l_g * l_g * u < kappa * g2;
    if !friction_ok {
        diagnostics.push(Diagnostic::FrictionTooSmall { gamma, min_gamma: (2.0 * l_g * l_g * u / kappa).sqrt() });
    }
    let has_interaction = !matches!(spec.interaction.kind, InteractionKind::None) && unconfined.is_none();

    if !(c.tau > 0.0) {
        c.admissible = false;
        return Ok(Derivation { constants: c, profile: None, diagnostics });
    }

    let indicator = if big_r > 0.0 { 1.0 } else { 0.0 };
    c.script_r = (8.0 * u * indicator + l_g * u * big_r * big_r) / (c.tau * g2);
    let root_r = c.script_r.sqrt();
    c.r1_lower = (2.0 / 3.0) * (1.0f64).min(c.alpha) * root_r;
    c.r1_upper = 4.0 * (8f64.sqrt() * lsum * u / (gamma * kappa.sqrt())).max(1.0) * root_r;
    c.r1_upper_derived = 4.0 * (8f64.sqrt() * lsum * u.sqrt() / (gamma * kappa.sqrt())).max(1.0) * root_r;

    let profile;
    if c.degenerate {
        c.d_k = 0.0;
        c.d_k_error = 0.0;
        c.r1 = 0.0;
        c.r1_error = 0.0;
        c.big_lambda = 0.0;
        profile = Arc::new(ConcaveProfile::identity(gamma, u));
        c.c_classical = (gamma / 16.0).min(kappa * u / (4.0 * gamma) - 8.0 * l_g * l_g * u * u / (g2 * gamma));
        c.log_c_classical = c.c_classical.ln();
        c.c_nonlinear = (gamma / 32.0).min(kappa * u / (8.0 * gamma) - l_g * l_g * u * u / (2.0 * g2 * gamma));
        c.c_chaos = c.c_classical / 2.0;
        c.max_interaction_lipschitz = c.tau * gamma * (kappa / u).sqrt() / 8.0;
        c.c1 = c.epsilon / gamma * (kappa * u).sqrt().min(1.0 / 2f64.sqrt());
        c.c_profile = c.c_classical;
    } else {
        let (d, s) = compute_d_k(spec, &c, opts);
        c.d_k = d.value;
        c.d_k_error = d.error_bar;
        c.sup_rs_over_rl = s.value;
        let (r1, t) = compute_r1(spec, &c, opts);
        c.r1 = r1.value;
        c.r1_error = r1.error_bar;
        c.sup_rl_over_rs = t.value;
        let lower = 2.0 * c.epsilon * root_r;
        let upper = 2.0 * (1.0 / c.cal_e - 2.0 * c.epsilon) * root_r;
        let slack = 1e-9 * upper.max(1.0);
        if !(c.r1 >= lower - slack && c.r1 <= upper + slack) {
            return Err(ConstantsError::BracketViolation { r1: c.r1, lower, upper });
        }
        let p = ConcaveProfile::build(c.r1, c.alpha, gamma, u);
        c.c_hat = p.c_hat;
        c.log_c_hat = p.log_c_hat;
        c.big_lambda = lsum * c.r1 * c.r1 / 4.0;
        let sl = c.big_lambda.sqrt();
        let inner = (lsum * u / g2 * sl / 4.0).min(sl / 8.0).min(c.tau * c.e_rate / 2.0);
        c.log_c_classical = gamma.ln() - c.big_lambda + inner.ln();
        c.c_classical = c.log_c_classical.exp();
        c.c_nonlinear = c.c_classical / 2.0;
        c.c_chaos = c.c_classical / 2.0;
        c.max_interaction_lipschitz = (-c.big_lambda).exp()
            * (gamma * c.tau / 12.0 * (kappa / u).sqrt() * (1.0f64).min(c.alpha)).min(lsum / 4.0);
        let fp = p.derivative_at_r1();
        c.c1 = fp * c.epsilon / gamma * (kappa * u).sqrt().min(1.0 / 2f64.sqrt());
        let ratio_term = gamma / 8.0 * c.r1 * p.phi(c.r1) / p.big_phi(c.r1);
        c.c_profile = (2.0 * c.c_hat).min(ratio_term).min(fp * gamma * c.tau * c.epsilon * c.cal_e / 2.0);
        profile = Arc::new(p);
    }

    let e_l = c.big_lambda;
    let m1_rest = (2.0 * lsum * u / gamma + gamma).max(1.0)
        * 0.5
        * (3.0f64).max(3.0 * g2 / (2.0 * lsum * u))
        * (2.0 / (kappa * u)).sqrt().max(2.0);
    c.log_m1 = e_l + m1_rest.ln();
    c.m1 = c.log_m1.exp();
    let m2_rest = 3.0 * (1.0f64).max(g2 / (2.0 * lsum * u)) * gamma * (2.0 / (kappa * u)).sqrt().max(2.0);
    c.log_m2 = e_l + m2_rest.ln();
    c.m2 = c.log_m2.exp();

    if has_interaction && !(spec.interaction.lipschitz <= c.max_interaction_lipschitz) {
        diagnostics.push(Diagnostic::InteractionTooStrong {
            max_lipschitz: c.max_interaction_lipschitz,
            declared: spec.interaction.lipschitz,
        });
    }
    c.admissible = diagnostics.is_empty();
    Ok(Derivation { constants: c, profile: Some(profile), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::model::{ExternalForce, InteractionForce};

    fn quad(kappa: f64, gamma: f64) -> ModelSpec {
        ModelSpec::new(
            1,
            gamma,
            1.0,
            ExternalForce::quadratic(SymMatrix::scaled_identity(1, kappa)).unwrap(),
            InteractionForce::none(),
        )
        .unwrap()
    }

    #[test]
    fn strongly_convex_rate() {
        let d = derive_constants(&quad(1.0, 2.0)).unwrap();
        assert_eq!(d.constants.lambda, 0.125);
        assert_eq!(d.constants.c_strong, 0.25);
        assert!(d.constants.degenerate);
        assert_eq!(d.constants.d_k, 0.0);
        assert_eq!(d.constants.r1, 0.0);
        assert!(d.profile.unwrap().is_identity());
    }

    #[test]
    fn small_friction_is_diagnosed() {
        let spec = ModelSpec::new(1, 2.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap();
        let d = derive_constants(&spec).unwrap();
        assert!(matches!(d.diagnostics[0], Diagnostic::FrictionTooSmall { .. }));
        assert!(d.constants.d_k.is_nan());
        assert!(d.profile.is_none());
    }
}
