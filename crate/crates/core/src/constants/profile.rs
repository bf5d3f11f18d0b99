//! The concave profile `f` and its quadrature tables.
//!
//! With `a = alpha gamma^2 / (4u)`:
//!
//! * `phi(s) = exp(-a (s ^ R1)^2 / 2)`, `Phi(s) = int_0^s phi`,
//! * `J(s) = int_0^(s ^ R1) Phi / phi`, `psi(s) = 1 - J(s) / (2 J(R1))`,
//! * `f(r) = int_0^r phi psi`, and the rate `c_hat = u / (gamma J(R1))`.
//!
//! `J` grows like `exp(a s^2 / 2)` and overflows for realistic parameters,
//! so it is tabulated as `log J`. Integrating by parts,
//! `int_0^r phi J = Phi(r) J(r) - int_0^r Phi^2 / phi`, hence
//! `f(r) = Phi(r) psi(r) + K(r) / (2 J(R1))` with `K(r) = int_0^r Phi^2 / phi`,
//! a sum of two non-negative terms that never overflows.

use serde::Serialize;

use crate::quadrature::{adaptive_simpson, gauss_legendre8};

/// Number of knots of the interpolation table.
pub const PROFILE_KNOTS: usize = 4096;
const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct ConcaveProfile {
    pub r1: f64,
    /// `a = alpha gamma^2 / (4u)`
    pub a: f64,
    pub gamma: f64,
    pub u: f64,
    #[serde(skip)]
    knots: Vec<f64>,
    #[serde(skip)]
    f: Vec<f64>,
    #[serde(skip)]
    df: Vec<f64>,
    #[serde(skip)]
    big_phi: Vec<f64>,
    #[serde(skip)]
    log_j: Vec<f64>,
    /// `log J(R1)`
    pub log_j_total: f64,
    pub c_hat: f64,
    pub log_c_hat: f64,
    /// `f(R1)` and the slope of `f` beyond `R1`.
    pub f_r1: f64,
    pub slope_beyond: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl ConcaveProfile {
    pub fn identity(gamma: f64, u: f64) -> Self {
        ConcaveProfile {
            r1: 0.0,
            a: 0.0,
            gamma,
            u,
            knots: vec![0.0],
            f: vec![0.0],
            df: vec![1.0],
            big_phi: vec![0.0],
            log_j: vec![f64::NEG_INFINITY],
            log_j_total: f64::NEG_INFINITY,
            c_hat: f64::INFINITY,
            log_c_hat: f64::INFINITY,
            f_r1: 0.0,
            slope_beyond: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.r1 == 0.0
    }

    /// Builds the tables for cutoff `r1` and `a = alpha gamma^2 / (4u)`.
    pub fn build(r1: f64, alpha: f64, gamma: f64, u: f64) -> Self {
        if !(r1 > 0.0) {
            return Self::identity(gamma, u);
        }
        let a = alpha * gamma * gamma / (4.0 * u);
        let knots = knot_grid(r1, a);
        let n = knots.len();
        let phi = |s: f64| (-0.5 * a * s * s).exp();

        let mut big_phi = vec![0.0; n];
        let mut log_j = vec![f64::NEG_INFINITY; n];
        let mut log_k = vec![f64::NEG_INFINITY; n];
        for k in 1..n {
            let (s0, s1) = (knots[k - 1], knots[k]);
            let p0 = big_phi[k - 1];
            let width = s1 - s0;
            big_phi[k] = p0 + adaptive_simpson(&phi, s0, s1, REL_TOL, 1e-300);
            // Phi on the interval, from the left knot
            let local_phi = |x: f64| p0 + gauss_legendre8(phi, s0, x);
            // scaled integrands: Phi^m(x) exp(a (x^2 - s1^2) / 2) <= Phi^m
            let scale = |x: f64| (0.5 * a * (x * x - s1 * s1)).exp();
            let ij = adaptive_simpson(&|x: f64| local_phi(x) * scale(x), s0, s1, REL_TOL, 1e-300 * width);
            let ik = adaptive_simpson(
                &|x: f64| {
                    let p = local_phi(x);
                    p * p * scale(x)
                },
                s0,
                s1,
                REL_TOL,
                1e-300 * width,
            );
            let lift = 0.5 * a * s1 * s1;
            log_j[k] = log_add_exp(log_j[k - 1], lift + ij.ln());
            log_k[k] = log_add_exp(log_k[k - 1], lift + ik.ln());
        }
        let log_j_total = log_j[n - 1];
        let mut f = vec![0.0; n];
        let mut df = vec![0.0; n];
        for k in 0..n {
            let psi = 1.0 - 0.5 * (log_j[k] - log_j_total).exp();
            f[k] = big_phi[k] * psi + 0.5 * (log_k[k] - log_j_total).exp();
            df[k] = phi(knots[k]) * psi;
        }
        f[0] = 0.0;
        // psi decreases, so each increment of f lies between psi at the two
        // ends times the increment of Phi; projecting onto that range removes
        // the cancellation error of the closed form where phi has underflowed
        let psi_at = |k: usize| 1.0 - 0.5 * (log_j[k] - log_j_total).exp();
        for k in 1..n {
            let d_phi = big_phi[k] - big_phi[k - 1];
            let lo = f[k - 1] + psi_at(k) * d_phi;
            let hi = f[k - 1] + psi_at(k - 1) * d_phi;
            f[k] = f[k].clamp(lo, hi.max(lo));
        }
        let log_c_hat = u.ln() - gamma.ln() - log_j_total;
        let slope_beyond = 0.5 * phi(r1);
        let f_r1 = f[n - 1];
        ConcaveProfile {
            r1,
            a,
            gamma,
            u,
            knots,
            f,
            df,
            big_phi,
            log_j,
            log_j_total,
            c_hat: log_c_hat.exp(),
            log_c_hat,
            f_r1,
            slope_beyond,
        }
    }

    pub fn phi(&self, s: f64) -> f64 {
        if self.is_identity() {
            return 1.0;
        }
        let t = s.min(self.r1);
        (-0.5 * self.a * t * t).exp()
    }

    fn locate(&self, r: f64) -> usize {
        // index k with knots[k] <= r < knots[k+1]
        match self.knots.binary_search_by(|k| k.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => (i - 1).min(self.knots.len() - 2),
        }
    }

    /// `Phi(s)` for `s <= R1`, and extended linearly with slope `phi(R1)`.
    pub fn big_phi(&self, s: f64) -> f64 {
        if self.is_identity() {
            return s;
        }
        if s >= self.r1 {
            return self.big_phi[self.knots.len() - 1] + (s - self.r1) * self.phi(self.r1);
        }
        let k = self.locate(s);
        let a = self.a;
        self.big_phi[k] + gauss_legendre8(|x| (-0.5 * a * x * x).exp(), self.knots[k], s)
    }

    /// `psi(s)`, with the ratio `J(s) / J(R1)` interpolated linearly in log
    /// scale between knots.
    pub fn psi(&self, s: f64) -> f64 {
        if self.is_identity() {
            return 1.0;
        }
        if s >= self.r1 {
            return 0.5;
        }
        let k = self.locate(s);
        let (s0, s1) = (self.knots[k], self.knots[k + 1]);
        let t = (s - s0) / (s1 - s0);
        let lj = if self.log_j[k] == f64::NEG_INFINITY {
            // J(s) ~ J(s1) (s/s1)^2 near the origin
            self.log_j[k + 1] + 2.0 * (s / s1).ln()
        } else {
            self.log_j[k] + t * (self.log_j[k + 1] - self.log_j[k])
        };
        (1.0 - 0.5 * (lj - self.log_j_total).exp()).clamp(0.5, 1.0)
    }

    /// `f(r)` by monotone cubic Hermite interpolation on the knot table,
    /// exactly linear beyond `R1`.
    pub fn value(&self, r: f64) -> f64 {
        if self.is_identity() {
            return r;
        }
        if r >= self.r1 {
            return self.f_r1 + (r - self.r1) * self.slope_beyond;
        }
        if r <= 0.0 {
            return 0.0;
        }
        let k = self.locate(r);
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let h = x1 - x0;
        let (y0, y1) = (self.f[k], self.f[k + 1]);
        let (m0, m1) = limited_slopes(y0, y1, self.df[k], self.df[k + 1], h);
        let t = (r - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        // increment form keeps flat stretches of the table exactly flat
        y0 + (3.0 * t2 - 2.0 * t3) * (y1 - y0) + h * ((t3 - 2.0 * t2 + t) * m0 + (t3 - t2) * m1)
    }

    /// `f'(r)`; beyond `R1` equal to `phi(R1) / 2`.
    pub fn derivative(&self, r: f64) -> f64 {
        if self.is_identity() {
            return 1.0;
        }
        if r >= self.r1 {
            return self.slope_beyond;
        }
        let k = self.locate(r.max(0.0));
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let h = x1 - x0;
        let (y0, y1) = (self.f[k], self.f[k + 1]);
        let (m0, m1) = limited_slopes(y0, y1, self.df[k], self.df[k + 1], h);
        let t = (r.max(0.0) - x0) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * h * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * h * m1)
            / h
    }

    /// `f'(R1) = phi(R1) psi(R1) = phi(R1) / 2`.
    pub fn derivative_at_r1(&self) -> f64 {
        self.slope_beyond
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// Fritsch-Carlson limiter on the exact knot slopes.
fn limited_slopes(y0: f64, y1: f64, m0: f64, m1: f64, h: f64) -> (f64, f64) {
    let delta = (y1 - y0) / h;
    if delta <= 0.0 {
        return (0.0, 0.0);
    }
    let al = m0 / delta;
    let be = m1 / delta;
    let s = al * al + be * be;
    if s > 9.0 {
        let tau = 3.0 / s.sqrt();
        (tau * m0, tau * m1)
    } else {
        (m0, m1)
    }
}

/// Knots on `[0, R1]`: when `R1` is far beyond the scale `1/sqrt(a)` on which
/// `phi` decays, three quarters of them resolve `[0, 40/sqrt(a)]`.
fn knot_grid(r1: f64, a: f64) -> Vec<f64> {
    let n = PROFILE_KNOTS;
    let s_b = 40.0 / a.sqrt();
    if r1 <= s_b * 1.34 {
        return (0..n).map(|i| r1 * i as f64 / (n - 1) as f64).collect();
    }
    let n1 = 3 * n / 4;
    let mut v: Vec<f64> = (0..n1).map(|i| s_b * i as f64 / (n1 - 1) as f64).collect();
    let n2 = n - n1;
    for i in 1..=n2 {
        v.push(s_b + (r1 - s_b) * i as f64 / n2 as f64);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_profile() {
        let p = ConcaveProfile::build(0.0, 0.3, 2.0, 1.0);
        for r in [0.0, 0.5, 7.0] {
            assert_eq!(p.value(r), r);
            assert_eq!(p.derivative(r), 1.0);
        }
    }

    #[test]
    fn profile_shape() {
        let p = ConcaveProfile::build(3.0, 0.4, 2.0, 1.0);
        assert_eq!(p.value(0.0), 0.0);
        let phi_r1 = p.big_phi(3.0);
        assert!(p.f_r1 >= 0.5 * phi_r1 - 1e-12 && p.f_r1 <= phi_r1 + 1e-12);
        assert!((p.psi(3.0) - 0.5).abs() < 1e-12);
        assert!((p.psi(0.0) - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for i in 1..2000 {
            let r = i as f64 * 0.003;
            let v = p.value(r);
            assert!(v > prev);
            assert!(v <= r);
            prev = v;
        }
    }

    #[test]
    fn big_phi_matches_closed_form_small_a() {
        // a = alpha gamma^2 / 4u = 0.5: Phi(s) = sqrt(pi) erf(s/2)
        let p = ConcaveProfile::build(2.0, 0.5, 2.0, 1.0);
        // erf(0.5) from its Taylor series
        let x: f64 = 0.5;
        let mut erf = 0.0;
        let mut term = x;
        for n in 0..30 {
            erf += term / (2 * n + 1) as f64;
            term *= -x * x / (n + 1) as f64;
        }
        erf *= 2.0 / std::f64::consts::PI.sqrt();
        assert!((p.big_phi(1.0) - std::f64::consts::PI.sqrt() * erf).abs() < 1e-12);
    }
}
