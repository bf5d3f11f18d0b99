use std::sync::Arc;

use kinlang::constants::{derive_constants, ConcaveProfile, Derivation};
use kinlang::linalg::SymMatrix;
use kinlang::metrics::{r_s_norm, TwistedQuadratic};
use kinlang::model::{ExternalForce, InteractionForce, ModelSpec, VectorField};

fn double_well() -> (ModelSpec, Derivation) {
    let spec = ModelSpec::new(1, 10.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap();
    let der = derive_constants(&spec).unwrap();
    (spec, der)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Matrix of the quadratic form `r_l^2` in the variables `(z, w)` for d = 1.
fn r_l_matrix(gamma: f64, u: f64, kappa: f64, tau: f64) -> [[f64; 2]; 2] {
    let a = 1.0 - 2.0 * tau;
    let gi = 1.0 / gamma;
    [[gi * gi * u * kappa + 0.5 * a * a, 0.5 * a * gi], [0.5 * a * gi, gi * gi]]
}

#[test]
fn double_well_hand_values() {
    let (_, der) = double_well();
    let c = &der.constants;
    assert!((c.tau - 0.0019).abs() < 1e-15, "tau {}", c.tau);
    assert!((c.alpha - 0.22).abs() < 1e-15);
    assert!((c.epsilon - 0.11).abs() < 1e-15);
    assert!((c.cal_e - 0.2273).abs() < 1e-4, "E {}", c.cal_e);
    assert!(der.diagnostics.is_empty());
}

#[test]
fn strongly_convex_rate_hand_value() {
    let spec = ModelSpec::new(1, 2.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(), InteractionForce::none()).unwrap();
    let c = derive_constants(&spec).unwrap().constants;
    assert_eq!(c.lambda, 0.125);
    assert_eq!(c.c_strong, 0.25);
}

#[test]
fn d_k_and_r1_match_lattice_search() {
    let (spec, der) = double_well();
    let c = &der.constants;
    let kappa = spec.external.splitting.kappa;
    let m = r_l_matrix(spec.gamma, spec.u, kappa, c.tau);
    let rl = TwistedQuadratic::new(spec.gamma, spec.u, SymMatrix::scaled_identity(1, kappa), c.tau);
    let delta = |z: f64, w: f64| r_s_norm(c.alpha, spec.gamma, &[z], &[w]) - c.epsilon * rl.norm(&[z], &[w]);

    // bounding box of {r_l^2 <= R}: half-widths sqrt(R (M^-1)_ii)
    let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
    let hz = (c.script_r * m[1][1] / det).sqrt();
    let hw = (c.script_r * m[0][0] / det).sqrt();
    let n = 2001;
    let mut d_grid = f64::NEG_INFINITY;
    for i in 0..n {
        let z = -hz + 2.0 * hz * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let w = -hw + 2.0 * hw * j as f64 / (n - 1) as f64;
            if rl.squared(&[z], &[w]) <= c.script_r {
                d_grid = d_grid.max(delta(z, w));
            }
        }
    }
    assert!(d_grid <= c.d_k * (1.0 + 1e-9), "lattice {d_grid} above D_K {}", c.d_k);
    assert!(close(d_grid, c.d_k, 2e-3), "lattice {d_grid} vs D_K {}", c.d_k);

    // {Delta <= D_K} lies in {r_s <= 2 D_K}, which bounds |z| and |w|
    let bz = 2.0 * c.d_k / c.alpha;
    let bw = spec.gamma * (2.0 * c.d_k + bz);
    let mut r1_grid = f64::NEG_INFINITY;
    for i in 0..n {
        let z = -bz + 2.0 * bz * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let w = -bw + 2.0 * bw * j as f64 / (n - 1) as f64;
            if delta(z, w) <= c.d_k {
                r1_grid = r1_grid.max(r_s_norm(c.alpha, spec.gamma, &[z], &[w]));
            }
        }
    }
    assert!(r1_grid <= c.r1 * (1.0 + 1e-9), "lattice {r1_grid} above R1 {}", c.r1);
    assert!(close(r1_grid, c.r1, 5e-3), "lattice {r1_grid} vs R1 {}", c.r1);
}

#[test]
fn d_k_and_r1_respect_closed_form_bounds() {
    let (_, der) = double_well();
    let c = &der.constants;
    let root = c.script_r.sqrt();
    assert!(c.d_k <= (1.0 / c.cal_e - 2.0 * c.epsilon) * root);
    assert!(c.r1 >= 2.0 * c.epsilon * root);
    assert!(c.r1 <= 2.0 * c.d_k * (1.0 + 1e-12));
}

#[test]
fn double_well_rate_is_reported_verbatim() {
    let (_, der) = double_well();
    let c = &der.constants;
    assert!(c.log_c_classical < -1000.0);
    assert_eq!(c.c_classical, 0.0);
    assert!(c.m1.is_infinite());
    assert!(c.log_m1.is_finite());
}

/// `J = int_0^R1 Phi / phi` by nested trapezoid sums on `n` intervals.
fn trapezoid_j(r1: f64, a: f64, n: usize) -> f64 {
    let h = r1 / n as f64;
    let phi = |s: f64| (-0.5 * a * s * s).exp();
    let mut big = 0.0;
    let mut prev = 0.0; // Phi(0) / phi(0)
    let mut j = 0.0;
    for i in 1..=n {
        let (s0, s1) = ((i - 1) as f64 * h, i as f64 * h);
        big += 0.5 * h * (phi(s0) + phi(s1));
        let cur = big / phi(s1);
        j += 0.5 * h * (prev + cur);
        prev = cur;
    }
    j
}

#[test]
fn c_hat_matches_richardson_trapezoid() {
    let (gamma, u, r1) = (2.0, 1.5, 2.0);
    let a = 1.2;
    let alpha = 4.0 * u * a / (gamma * gamma);
    let p = ConcaveProfile::build(r1, alpha, gamma, u);
    assert!(close(p.a, a, 1e-14));
    let j1 = trapezoid_j(r1, a, 20_000);
    let j2 = trapezoid_j(r1, a, 40_000);
    let j = (4.0 * j2 - j1) / 3.0;
    let oracle = u / (gamma * j);
    assert!(close(p.c_hat, oracle, 1e-8), "c_hat {} vs {oracle}", p.c_hat);
}

#[test]
fn profile_value_at_r1_lies_between_half_phi_and_phi() {
    let (_, der) = double_well();
    let p = der.profile.unwrap();
    let (f, big) = (p.value(p.r1), p.big_phi(p.r1));
    assert!(f >= 0.5 * big && f <= big, "f(R1) {f}, Phi(R1) {big}");
    for (r1, alpha) in [(0.5, 0.3), (3.0, 1.0), (10.0, 0.05)] {
        let p = ConcaveProfile::build(r1, alpha, 2.0, 1.0);
        let (f, big) = (p.value(r1), p.big_phi(r1));
        assert!(f >= 0.5 * big && f <= big * (1.0 + 1e-12), "r1 {r1}: f {f}, Phi {big}");
    }
}

#[test]
fn zero_radius_gives_identity_profile() {
    // b = -2x - 0.5 tanh(x): g is monotone everywhere, so R = 0
    let b: VectorField = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -2.0 * x[0] - 0.5 * x[0].tanh());
    let ext = ExternalForce::custom("monotone", b, SymMatrix::scaled_identity(1, 2.0), 0.5, 0.0).unwrap();
    let (gamma, u) = (3.0, 0.5);
    let spec = ModelSpec::new(1, gamma, u, ext, InteractionForce::none()).unwrap();
    let der = derive_constants(&spec).unwrap();
    let c = &der.constants;
    assert!(c.degenerate);
    assert_eq!(c.script_r, 0.0);
    assert_eq!(c.d_k, 0.0);
    assert_eq!(c.r1, 0.0);
    let p = der.profile.unwrap();
    for r in [0.0, 0.3, 1.0, 17.5] {
        assert_eq!(p.value(r), r);
        assert_eq!(p.derivative(r), 1.0);
    }
    let (kappa, l_g) = (2.0, 0.5);
    let expected = (gamma / 16.0).min(kappa * u / (4.0 * gamma) - 8.0 * l_g * l_g * u * u / gamma.powi(3));
    assert!(close(c.c_classical, expected, 1e-15), "{} vs {expected}", c.c_classical);
}

#[test]
fn tau_rises_with_friction_up_to_its_peak() {
    // tau = u kappa / (2 gamma^2) - L_g^2 u^2 / gamma^4 peaks at gamma^2 = 4 L_g^2 u / kappa
    let (kappa, l_g) = (2.0, 9.0);
    let peak = (4.0 * l_g * l_g / kappa as f64).sqrt();
    let mut last = f64::NEG_INFINITY;
    let mut gamma = 6.5;
    while gamma < 40.0 {
        let spec = ModelSpec::new(1, gamma, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap();
        let c = derive_constants(&spec).unwrap().constants;
        let hand = (0.125f64).min(kappa / (2.0 * gamma * gamma) - l_g * l_g / gamma.powi(4));
        assert!(close(c.tau, hand, 1e-14));
        if gamma <= peak {
            assert!(c.tau >= last, "tau fell at gamma {gamma}");
        } else if gamma - 0.25 >= peak {
            assert!(c.tau <= last, "tau rose at gamma {gamma}");
        }
        last = c.tau;
        gamma += 0.25;
    }
}
