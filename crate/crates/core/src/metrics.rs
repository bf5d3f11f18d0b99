//! Distances on phase space `R^{2d}` and on ensembles.
//!
//! Every kind can be called on a pair of points or directly on a difference
//! `(z, w) = (x - x', y - y')`; the two call shapes agree by construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ConcaveProfile, Derivation, MetricConstants};
use crate::linalg::{norm, SymMatrix};
use crate::model::ModelSpec;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("ensemble sizes differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("metric `{0}` is undefined for this model: {1}")]
    Undefined(&'static str, String),
}

/// Position and velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len(), "position and velocity dimensions differ");
        PhasePoint { x, y }
    }

    pub fn zeros(d: usize) -> Self {
        PhasePoint { x: vec![0.0; d], y: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    /// `(x - other.x, y - other.y)`
    pub fn diff(&self, other: &PhasePoint) -> (Vec<f64>, Vec<f64>) {
        let z = self.x.iter().zip(&other.x).map(|(a, b)| a - b).collect();
        let w = self.y.iter().zip(&other.y).map(|(a, b)| a - b).collect();
        (z, w)
    }
}

/// `sqrt(gamma^-2 u z.Kz + |(1-2t) z + gamma^-1 w|^2 / 2 + gamma^-2 |w|^2 / 2)`
/// for a twist parameter `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistedQuadratic {
    pub gamma: f64,
    pub u: f64,
    pub k: SymMatrix,
    pub twist: f64,
}

impl TwistedQuadratic {
    pub fn new(gamma: f64, u: f64, k: SymMatrix, twist: f64) -> Self {
        TwistedQuadratic { gamma, u, k, twist }
    }

    pub fn squared(&self, z: &[f64], w: &[f64]) -> f64 {
        let gi = 1.0 / self.gamma;
        let a = 1.0 - 2.0 * self.twist;
        let mut mixed = 0.0;
        let mut ww = 0.0;
        for i in 0..z.len() {
            let m = a * z[i] + gi * w[i];
            mixed += m * m;
            ww += w[i] * w[i];
        }
        gi * gi * self.u * self.k.quad(z) + 0.5 * mixed + 0.5 * gi * gi * ww
    }

    pub fn norm(&self, z: &[f64], w: &[f64]) -> f64 {
        self.squared(z, w).max(0.0).sqrt()
    }

    /// Gradient of the squared form with respect to `(z, w)`.
    pub fn squared_gradient(&self, z: &[f64], w: &[f64], gz: &mut [f64], gw: &mut [f64]) {
        let gi = 1.0 / self.gamma;
        let a = 1.0 - 2.0 * self.twist;
        self.k.mul_into(z, gz);
        for i in 0..z.len() {
            let m = a * z[i] + gi * w[i];
            gz[i] = 2.0 * gi * gi * self.u * gz[i] + a * m;
            gw[i] = gi * m + gi * gi * w[i];
        }
    }
}

/// `alpha |z| + |z + gamma^-1 w|`
pub fn r_s_norm(alpha: f64, gamma: f64, z: &[f64], w: &[f64]) -> f64 {
    let gi = 1.0 / gamma;
    let mut zz = 0.0;
    let mut qq = 0.0;
    for i in 0..z.len() {
        zz += z[i] * z[i];
        let q = z[i] + gi * w[i];
        qq += q * q;
    }
    alpha * zz.sqrt() + qq.sqrt()
}

/// The glued metric `f((Delta ^ D_K) + eps r_l)`, or `r_l` when the model
/// has no non-convex region.
#[derive(Clone, Debug)]
pub struct RhoMetric {
    pub r_l: TwistedQuadratic,
    pub alpha: f64,
    pub epsilon: f64,
    pub d_k: f64,
    pub profile: Arc<ConcaveProfile>,
    pub degenerate: bool,
}

impl RhoMetric {
    pub fn from_derivation(spec: &ModelSpec, der: &Derivation) -> Result<Self, MetricError> {
        let c = &der.constants;
        let profile = der
            .profile
            .clone()
            .ok_or_else(|| MetricError::Undefined("rho", "constants are not admissible (tau <= 0)".into()))?;
        Ok(RhoMetric {
            r_l: TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), c.tau),
            alpha: c.alpha,
            epsilon: c.epsilon,
            d_k: c.d_k,
            profile,
            degenerate: c.degenerate,
        })
    }

    pub fn parts(&self, z: &[f64], w: &[f64]) -> RhoParts {
        let rl = self.r_l.norm(z, w);
        let rs = r_s_norm(self.alpha, self.r_l.gamma, z, w);
        let delta = rs - self.epsilon * rl;
        let rho = if self.degenerate { rl } else { self.profile.value(delta.min(self.d_k) + self.epsilon * rl) };
        RhoParts { rs, rl, delta, rho }
    }

    pub fn norm(&self, z: &[f64], w: &[f64]) -> f64 {
        self.parts(z, w).rho
    }
}

/// All intermediate quantities of one evaluation of the glued metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoParts {
    pub rs: f64,
    pub rl: f64,
    pub delta: f64,
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub enum GroundMetric {
    /// Euclidean norm on `R^{2d}`.
    Euclidean,
    /// `|x - x'| + |y - y'|`, the per-particle term of the ensemble l1 distance.
    SplitEuclidean,
    RStrong(TwistedQuadratic),
    RL(TwistedQuadratic),
    RS { alpha: f64, gamma: f64 },
    Rho(Arc<RhoMetric>),
    RTilde(TwistedQuadratic),
}

impl GroundMetric {
    pub fn name(&self) -> &'static str {
        match self {
            GroundMetric::Euclidean => "euclidean",
            GroundMetric::SplitEuclidean => "split_euclidean",
            GroundMetric::RStrong(_) => "r_strong",
            GroundMetric::RL(_) => "r_l",
            GroundMetric::RS { .. } => "r_s",
            GroundMetric::Rho(_) => "rho",
            GroundMetric::RTilde(_) => "r_tilde",
        }
    }

    /// Strongly convex metric with twist `lambda`.
    pub fn r_strong(spec: &ModelSpec, c: &MetricConstants) -> Self {
        GroundMetric::RStrong(TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), c.lambda))
    }

    pub fn r_l(spec: &ModelSpec, c: &MetricConstants) -> Self {
        GroundMetric::RL(TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), c.tau))
    }

    pub fn r_s(spec: &ModelSpec, c: &MetricConstants) -> Self {
        GroundMetric::RS { alpha: c.alpha, gamma: spec.gamma }
    }

    pub fn rho(spec: &ModelSpec, der: &Derivation) -> Result<Self, MetricError> {
        Ok(GroundMetric::Rho(Arc::new(RhoMetric::from_derivation(spec, der)?)))
    }

    pub fn r_tilde(spec: &ModelSpec, c: &MetricConstants) -> Result<Self, MetricError> {
        let s = spec
            .interaction
            .unconfined_splitting()
            .ok_or_else(|| MetricError::Undefined("r_tilde", "interaction has no unconfined splitting".into()))?;
        Ok(GroundMetric::RTilde(TwistedQuadratic::new(spec.gamma, spec.u, s.k.clone(), c.sigma)))
    }

    /// Distance as a function of the difference `(z, w)`.
    pub fn norm(&self, z: &[f64], w: &[f64]) -> f64 {
        match self {
            GroundMetric::Euclidean => (norm(z).powi(2) + norm(w).powi(2)).sqrt(),
            GroundMetric::SplitEuclidean => norm(z) + norm(w),
            GroundMetric::RStrong(q) | GroundMetric::RL(q) | GroundMetric::RTilde(q) => q.norm(z, w),
            GroundMetric::RS { alpha, gamma } => r_s_norm(*alpha, *gamma, z, w),
            GroundMetric::Rho(r) => r.norm(z, w),
        }
    }

    pub fn dist(&self, a: &PhasePoint, b: &PhasePoint) -> Result<f64, MetricError> {
        if a.dim() != b.dim() {
            return Err(MetricError::Dimension(a.dim(), b.dim()));
        }
        let (z, w) = a.diff(b);
        Ok(self.norm(&z, &w))
    }

    /// Distance between two points given as slices, without allocation for
    /// the common small dimensions.
    pub fn dist_slices(&self, xa: &[f64], ya: &[f64], xb: &[f64], yb: &[f64]) -> f64 {
        let d = xa.len();
        if d <= 4 {
            let mut z = [0.0; 4];
            let mut w = [0.0; 4];
            for i in 0..d {
                z[i] = xa[i] - xb[i];
                w[i] = ya[i] - yb[i];
            }
            self.norm(&z[..d], &w[..d])
        } else {
            let z: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| a - b).collect();
            let w: Vec<f64> = ya.iter().zip(yb).map(|(a, b)| a - b).collect();
            self.norm(&z, &w)
        }
    }
}

/// `r_s - eps r_l` for a pair.
pub fn delta(c: &MetricConstants, spec: &ModelSpec, a: &PhasePoint, b: &PhasePoint) -> f64 {
    let (z, w) = a.diff(b);
    delta_norm(c, spec, &z, &w)
}

pub fn delta_norm(c: &MetricConstants, spec: &ModelSpec, z: &[f64], w: &[f64]) -> f64 {
    let rl = TwistedQuadratic::new(spec.gamma, spec.u, spec.external.splitting.k.clone(), c.tau).norm(z, w);
    r_s_norm(c.alpha, spec.gamma, z, w) - c.epsilon * rl
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Mean of the per-particle distances.
    L1Mean,
    /// Root mean square of the per-particle distances.
    L2Mean,
}

pub fn ensemble_dist(metric: &GroundMetric, a: &[PhasePoint], b: &[PhasePoint], mode: EnsembleMode) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    let mut acc = 0.0;
    for (p, q) in a.iter().zip(b) {
        let d = metric.dist(p, q)?;
        acc += match mode {
            EnsembleMode::L1Mean => d,
            EnsembleMode::L2Mean => d * d,
        };
    }
    let m = acc / a.len() as f64;
    Ok(match mode {
        EnsembleMode::L1Mean => m,
        EnsembleMode::L2Mean => m.sqrt(),
    })
}

/// Subtracts the ensemble mean from every position and velocity.
pub fn project_centered(points: &[PhasePoint]) -> Vec<PhasePoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let d = points[0].dim();
    let n = points.len() as f64;
    let mut mx = vec![0.0; d];
    let mut my = vec![0.0; d];
    for p in points {
        for i in 0..d {
            mx[i] += p.x[i];
            my[i] += p.y[i];
        }
    }
    mx.iter_mut().for_each(|v| *v /= n);
    my.iter_mut().for_each(|v| *v /= n);
    points
        .iter()
        .map(|p| PhasePoint {
            x: p.x.iter().zip(&mx).map(|(a, m)| a - m).collect(),
            y: p.y.iter().zip(&my).map(|(a, m)| a - m).collect(),
        })
        .collect()
}

/// Root mean square of `r~` between the centered ensembles.
pub fn rho_hat_n(r_tilde: &GroundMetric, a: &[PhasePoint], b: &[PhasePoint]) -> Result<f64, MetricError> {
    ensemble_dist(r_tilde, &project_centered(a), &project_centered(b), EnsembleMode::L2Mean)
}

/// Mean of `r~` between the centered ensembles.
pub fn rho_tilde_n(r_tilde: &GroundMetric, a: &[PhasePoint], b: &[PhasePoint]) -> Result<f64, MetricError> {
    ensemble_dist(r_tilde, &project_centered(a), &project_centered(b), EnsembleMode::L1Mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_s_hand_value() {
        let m = GroundMetric::RS { alpha: 0.22, gamma: 1.0 };
        let a = PhasePoint::new(vec![1.0], vec![0.0]);
        let b = PhasePoint::zeros(1);
        assert!((m.dist(&a, &b).unwrap() - 1.22).abs() < 1e-15);
        assert_eq!(m.dist(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn twisted_quadratic_gradient_matches_differences() {
        let q = TwistedQuadratic::new(1.7, 0.8, SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(), 0.1);
        let z = [0.4, -1.2];
        let w = [0.9, 0.2];
        let mut gz = [0.0; 2];
        let mut gw = [0.0; 2];
        q.squared_gradient(&z, &w, &mut gz, &mut gw);
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z;
            zp[i] += h;
            let mut zm = z;
            zm[i] -= h;
            let fd = (q.squared(&zp, &w) - q.squared(&zm, &w)) / (2.0 * h);
            assert!((fd - gz[i]).abs() < 1e-8);
            let mut wp = w;
            wp[i] += h;
            let mut wm = w;
            wm[i] -= h;
            let fd = (q.squared(&z, &wp) - q.squared(&z, &wm)) / (2.0 * h);
            assert!((fd - gw[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let pts = vec![PhasePoint::new(vec![1.0], vec![0.0]), PhasePoint::new(vec![3.0], vec![2.0])];
        let c = project_centered(&pts);
        assert_eq!(c[0].x, vec![-1.0]);
        assert_eq!(c[1].x, vec![1.0]);
        assert_eq!(project_centered(&c), c);
    }

    #[test]
    fn ensemble_modes() {
        let m = GroundMetric::Euclidean;
        let a = vec![PhasePoint::new(vec![0.0], vec![0.0]), PhasePoint::new(vec![0.0], vec![0.0])];
        let b = vec![PhasePoint::new(vec![3.0], vec![4.0]), PhasePoint::new(vec![1.0], vec![0.0])];
        assert_eq!(ensemble_dist(&m, &a, &b, EnsembleMode::L1Mean).unwrap(), 3.0);
        assert!((ensemble_dist(&m, &a, &b, EnsembleMode::L2Mean).unwrap() - 13f64.sqrt()).abs() < 1e-15);
        assert!(ensemble_dist(&m, &a, &b[..1], EnsembleMode::L1Mean).is_err());
    }
}
