//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 3 4`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use kinlang::constants::{derive_constants, ConcaveProfile, Derivation};
use kinlang::coupling::{marginal_check, CoupledEnsemble, CoupledStepper, CouplingControl, CouplingMode, LawTerm, RcEvaluator};
use kinlang::dynamics::{IntegratorConfig, Stepper, System};
use kinlang::harness::config::{ExperimentConfig, InitialLaw};
use kinlang::harness::experiments::{run_chaos, run_contraction, run_moments, ExperimentRecord};
use kinlang::linalg::SymMatrix;
use kinlang::metrics::RhoMetric;
use kinlang::model::{ExternalForce, InteractionForce, ModelSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn config(v: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&v.to_string()).expect("acceptance config is valid")
}

fn contraction(v: Value) -> ExperimentRecord {
    run_contraction(&config(v)).expect("contraction run")
}

fn max_excess(rec: &ExperimentRecord) -> f64 {
    rec.series.iter().map(|p| p.excess).fold(f64::NEG_INFINITY, f64::max)
}

fn decay_fraction(rec: &ExperimentRecord) -> f64 {
    1.0 - rec.series.last().unwrap().mean / rec.series[0].mean
}

// 1 -------------------------------------------------------------------------

fn strongly_convex_exact() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (d, first) in [(1, json!({"x": [1.0], "y": [0.0]})), (3, json!({"x": [1.0, -0.5, 0.3], "y": [0.2, 0.0, -0.4]}))] {
        let zero = json!({"x": vec![0.0; d], "y": vec![0.0; d]});
        let h = 1e-3;
        let rec = contraction(json!({
            "model": {"dimension": d, "gamma": 2.0, "u": 1.0, "external": {"kind": "quadratic", "k": 1.0}},
            "integrator": {"step": h, "horizon": 20.0, "seed": 1},
            "experiment": "contract_strong",
            "replicas": 1,
            "dumps": 100,
            "initial": {"kind": "dirac", "first": first, "second": zero},
            "tolerance": {"relative": 10.0 * h}
        }));
        let ok = rec.inequality_holds == Some(true) && rec.series.len() == 101 && (rec.theory_rate - 0.25).abs() < 1e-15;
        pass &= ok;
        detail.push(format!("d={d}: c={} max excess {:.3e}", rec.theory_rate, max_excess(&rec)));
    }
    Outcome::new(pass, detail.join("; "))
}

// 2 -------------------------------------------------------------------------

fn spectral_gap_order() -> Outcome {
    let mut ratios = Vec::new();
    for kappa in [0.25f64, 1.0, 4.0] {
        let rec = contraction(json!({
            "model": {"dimension": 1, "gamma": 2.0 * kappa.sqrt(), "u": 1.0, "external": {"kind": "quadratic", "k": kappa}},
            "integrator": {"step": 1e-3, "horizon": 80.0, "noise": false},
            "experiment": "contract_strong",
            "replicas": 1,
            "dumps": 400,
            "initial": {"kind": "dirac", "first": {"x": [1.0], "y": [0.0]}, "second": {"x": [0.0], "y": [0.0]}},
            "fit_floor": 1e-9
        }));
        let fit = rec.rate_fit.expect("rate fit");
        ratios.push((kappa, fit.rate, fit.rate / kappa.sqrt()));
    }
    let reference = ratios[1].2;
    let pass = ratios.iter().all(|r| (r.2 / reference - 1.0).abs() <= 0.15);
    let detail = ratios.iter().map(|(k, r, q)| format!("kappa={k}: rate {r:.4}, rate/sqrt(kappa) {q:.4}")).collect::<Vec<_>>().join("; ");
    Outcome::new(pass, detail)
}

// 3 -------------------------------------------------------------------------

fn random_admissible_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let d = rng.gen_range(1..=3);
    let kappa = rng.gen_range(0.2..3.0);
    let diag: Vec<f64> = (0..d).map(|i| if i == 0 { kappa } else { kappa * rng.gen_range(1.0..3.0) }).collect();
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect();
    let k = SymMatrix::from_rows(&rows).unwrap();
    let u = rng.gen_range(0.5..2.0);
    let (l_g, r) = if rng.gen_bool(0.2) { (0.0, 0.0) } else { (rng.gen_range(0.1..4.0), rng.gen_range(0.1..3.0)) };
    // admissible friction: gamma^2 > 2 L_g^2 u / kappa
    let gamma_min = (2.0 * l_g * l_g * u / kappa).sqrt();
    let gamma = gamma_min.max(0.5) * rng.gen_range(1.1..3.0);
    let kc = k.clone();
    let b: kinlang::model::VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| {
        kc.mul_into(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    });
    let ext = ExternalForce::custom("random", b, k, l_g, r).unwrap();
    ModelSpec::new(d, gamma, u, ext, InteractionForce::none()).unwrap()
}

fn profile_checks(p: &ConcaveProfile, der: &Derivation) -> Result<(), String> {
    let c = &der.constants;
    let r1 = p.r1;
    let top = if r1 > 0.0 { 1.5 * r1 } else { 10.0 };
    let n = 1000;
    let grid: Vec<f64> = (0..=n).map(|i| top * i as f64 / n as f64).collect();
    for &s in &grid {
        let psi = p.psi(s);
        if !(0.5 - 1e-12..=1.0 + 1e-12).contains(&psi) {
            return Err(format!("psi({s}) = {psi}"));
        }
    }
    let f: Vec<f64> = grid.iter().map(|&r| p.value(r)).collect();
    let scale = f.last().unwrap().abs().max(1.0);
    for i in 1..f.len() {
        if f[i] < f[i - 1] {
            return Err(format!("f decreases at r={}: {} -> {} (R1 {r1}, a {})", grid[i], f[i - 1], f[i], p.a));
        }
    }
    for i in 1..f.len() - 1 {
        let second = f[i + 1] - 2.0 * f[i] + f[i - 1];
        if second > 1e-12 * scale {
            return Err(format!("f'' > 0 at r={}: {second:e} (R1 {r1}, f {}, a {})", grid[i], f[i], p.a));
        }
    }
    let slope = p.derivative_at_r1();
    for (&r, &fr) in grid.iter().zip(&f) {
        // tables are built to the quadrature tolerance 1e-9
        let tol = 1e-9 * fr.max(1e-300) + 1e-15;
        if slope * r > fr + tol || fr > p.big_phi(r) + tol || p.big_phi(r) > r + tol {
            return Err(format!("sandwich fails at r={r}: f'(R1) r={}, f={fr}, Phi={}", slope * r, p.big_phi(r)));
        }
    }
    if c.degenerate {
        if !p.is_identity() || grid.iter().zip(&f).any(|(r, fr)| r != fr) {
            return Err("R = 0 but f is not the identity".into());
        }
    } else if !(c.r1_lower <= c.r1 && c.r1 <= c.r1_upper) {
        return Err(format!("R1 {} outside [{}, {}]", c.r1, c.r1_lower, c.r1_upper));
    }
    Ok(())
}

fn constants_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let mut degenerate = 0;
    let total = 1000;
    for i in 0..total {
        let spec = random_admissible_spec(&mut rng);
        match derive_constants(&spec) {
            Ok(der) => {
                degenerate += der.constants.degenerate as usize;
                match &der.profile {
                    Some(p) => {
                        if let Err(e) = profile_checks(p, &der) {
                            failures.push(format!("spec {i}: {e}"));
                        }
                    }
                    None => failures.push(format!("spec {i}: no profile")),
                }
            }
            Err(e) => failures.push(format!("spec {i}: {e}")),
        }
    }
    let detail = format!("{total} specs ({degenerate} with R=0), {} failures{}", failures.len(), failures.iter().take(5).map(|f| format!("; {f}")).collect::<String>());
    Outcome::new(failures.is_empty(), detail)
}

// 4 -------------------------------------------------------------------------

fn metric_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let specs: Vec<ModelSpec> = vec![
        ModelSpec::new(1, 10.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap(),
        ModelSpec::new(1, 2.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(), InteractionForce::none()).unwrap(),
    ]
    .into_iter()
    .chain((0..4).map(|_| random_admissible_spec(&mut rng)))
    .collect();
    let per_spec = 10_000 / specs.len() + 1;
    let (mut worst_tri, mut worst_lo, mut worst_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut count = 0;
    for spec in &specs {
        let der = derive_constants(spec).unwrap();
        let rho = RhoMetric::from_derivation(spec, &der).unwrap();
        let c = &der.constants;
        let d = spec.dimension;
        let scale_of = |rng: &mut ChaCha8Rng| {
            let r1 = if c.r1 > 0.0 { c.r1 } else { 1.0 };
            r1 * 10f64.powf(rng.gen_range(-4.0..1.5))
        };
        for _ in 0..per_spec {
            let mut pts = Vec::new();
            for _ in 0..3 {
                let s = scale_of(&mut rng);
                let x: Vec<f64> = (0..d).map(|_| s * rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| s * rng.gen_range(-1.0..1.0)).collect();
                pts.push((x, y));
            }
            let dist = |a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)| {
                let z: Vec<f64> = a.0.iter().zip(&b.0).map(|(p, q)| p - q).collect();
                let w: Vec<f64> = a.1.iter().zip(&b.1).map(|(p, q)| p - q).collect();
                let e = (z.iter().chain(&w).map(|v| v * v).sum::<f64>()).sqrt();
                (rho.norm(&z, &w), e)
            };
            let (ab, eab) = dist(&pts[0], &pts[1]);
            let (bc, _) = dist(&pts[1], &pts[2]);
            let (ac, _) = dist(&pts[0], &pts[2]);
            worst_tri = worst_tri.max(ac - ab - bc);
            worst_lo = worst_lo.max(c.c1 * eab - ab);
            worst_hi = worst_hi.max(ab - c.c2 * eab);
            count += 1;
        }
    }
    let tol = 1e-10;
    Outcome::new(
        worst_tri <= tol && worst_lo <= tol && worst_hi <= tol,
        format!("{count} triples over {} specs; worst triangle {worst_tri:.2e}, lower {worst_lo:.2e}, upper {worst_hi:.2e}", specs.len()),
    )
}

// 5 -------------------------------------------------------------------------

fn coupling_validity() -> Outcome {
    let spec = ModelSpec::new(1, 10.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap();
    let der = derive_constants(&spec).unwrap();
    let rho = RhoMetric::from_derivation(&spec, &der).unwrap();
    let cfg = IntegratorConfig::new(0.01, 2.0).with_seed(51);
    let xi = CouplingControl::default_width_for_step(&der.constants, spec.gamma, spec.u, cfg.step);
    let control = CouplingControl::new(xi, CouplingMode::ReflectionMix).unwrap();
    let rc = RcEvaluator::from_rho(&rho, &control);

    let n = 10_000;
    let init = InitialLaw::Gaussian {
        mean: kinlang::metrics::PhasePoint::new(vec![-1.0], vec![0.0]),
        std: 0.5,
        shift: Some(kinlang::metrics::PhasePoint::new(vec![2.0], vec![0.0])),
    };
    let (a, b) = init.sample(1, n, 52, 0).unwrap();
    let mut pairs = CoupledEnsemble::new(a, b).unwrap();
    let mut stepper = CoupledStepper::new(&spec, &cfg, rc.clone(), LawTerm::Ignore).unwrap();
    let steps = cfg.steps();
    let mut mixed = 0usize;
    let mut z = [0.0];
    let mut w = [0.0];
    for _ in 0..steps {
        stepper.step(&mut pairs).unwrap();
        for i in 0..n {
            pairs.diff_into(i, &mut z, &mut w);
            let r = rc.rc(&z, &w);
            mixed += (r > 0.0 && r < 1.0) as usize;
        }
    }

    let (ia, ib) = init.sample(1, n, 53, 0).unwrap();
    let mut indep = [ia, ib];
    for (k, ens) in indep.iter_mut().enumerate() {
        let icfg = cfg.clone().with_seed(54 + k as u64);
        let mut s = Stepper::new(&spec, &icfg, System::Classical).unwrap();
        for _ in 0..steps {
            s.step(ens).unwrap();
        }
    }
    let first = marginal_check(&pairs.first, &indep[0]);
    let second = marginal_check(&pairs.second, &indep[1]);
    let worst_z = first.entries.iter().chain(&second.entries).map(|e| e.z_score).fold(0.0, f64::max);

    // rc^2 + sc^2 = 1 on random differences around both switching bands
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst_sum = 0.0f64;
    let d_k = der.constants.d_k;
    for _ in 0..100_000 {
        let scale = match rng.gen_range(0..3) {
            0 => xi,
            1 => d_k,
            _ => der.constants.r1,
        };
        let z = [scale * rng.gen_range(-2.0..2.0)];
        let w = [scale * rng.gen_range(-2.0..2.0)];
        let (r, s) = (rc.rc(&z, &w), rc.sc(&z, &w));
        worst_sum = worst_sum.max((r * r + s * s - 1.0).abs());
    }
    Outcome::new(
        first.ok && second.ok && worst_sum <= 1e-12,
        format!("{n} pairs, {} mixed rc evaluations; worst marginal z-score {worst_z:.2} (limit 4); max |rc^2+sc^2-1| {worst_sum:.1e}", mixed),
    )
}

// 6 -------------------------------------------------------------------------

fn double_well_contraction() -> Outcome {
    let rec = contraction(json!({
        "model": {"dimension": 1, "gamma": 10.0, "u": 1.0, "external": {"kind": "double_well", "beta": 1.0}},
        "integrator": {"horizon": 10.0, "seed": 6},
        "experiment": "contract_classical",
        "replicas": 10000,
        "dumps": 20,
        "initial": {"kind": "gaussian", "mean": {"x": [1.0], "y": [0.0]}, "std": 0.5, "shift": {"x": [0.5], "y": [0.0]}},
        "tolerance": {"se_factor": 2.0, "calibrate_step": true}
    }));
    let decay = decay_fraction(&rec);
    Outcome::new(
        rec.inequality_holds == Some(true) && decay >= 0.5,
        format!("c={:e} (log c={:.1}), C_h={:.3}, max excess {:.2e}, E[rho] decay over T=10: {:.1}%", rec.theory_rate, rec.constants.log_c_classical, rec.c_h, max_excess(&rec), 100.0 * decay),
    )
}

// 7 -------------------------------------------------------------------------

fn nonlinear_contraction() -> Outcome {
    let (gamma, kappa, u, l_g) = (2.0f64, 1.0f64, 1.0f64, 0.0f64);
    let cap = derive_constants(&ModelSpec::new(1, gamma, u, ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(), InteractionForce::linear(1.0)).unwrap())
        .unwrap()
        .constants
        .max_interaction_lipschitz;
    let k = cap / 2.0;
    let rec = contraction(json!({
        "model": {"dimension": 1, "gamma": gamma, "u": u, "external": {"kind": "quadratic", "k": kappa}, "interaction": {"kind": "linear", "k": k}},
        "integrator": {"horizon": 10.0, "seed": 7},
        "experiment": "contract_nonlinear",
        "replicas": 10000,
        "dumps": 20,
        "initial": {"kind": "gaussian", "mean": {"x": [0.0], "y": [0.0]}, "std": 0.5, "shift": {"x": [2.0], "y": [1.0]}},
        "tolerance": {"se_factor": 2.0, "calibrate_step": true}
    }));
    let expected = (gamma / 32.0).min(kappa * u / (8.0 * gamma) - l_g * l_g * u * u / (2.0 * gamma.powi(3)));
    let rate_ok = (rec.theory_rate - expected).abs() <= 1e-15;
    Outcome::new(
        rec.inequality_holds == Some(true) && rate_ok && rec.guarantee,
        format!("k={k} (cap {cap}), rate {} (expected {expected}), C_h={:.3}, max excess {:.2e}", rec.theory_rate, rec.c_h, max_excess(&rec)),
    )
}

// 8 -------------------------------------------------------------------------

fn propagation_of_chaos() -> Outcome {
    let rec = run_chaos(&config(json!({
        "model": {"dimension": 1, "gamma": 2.0, "u": 1.0, "external": {"kind": "quadratic", "k": 1.0}, "interaction": {"kind": "linear", "k": 0.015625}},
        "integrator": {"horizon": 2.0, "seed": 8},
        "experiment": "chaos",
        "replicas": 256,
        "ensemble_sizes": [8, 16, 32, 64, 128],
        "proxy_size": 1024,
        "bootstrap": 20,
        "initial": {"kind": "gaussian", "mean": {"x": [0.0], "y": [0.0]}, "std": 1.0}
    })))
    .expect("chaos run");
    let fit = rec.slope_fit.expect("slope fit");
    let table = rec.chaos.iter().map(|r| format!("N={}: {:.3e}", r.n, r.w)).collect::<Vec<_>>().join(", ");
    Outcome::new(
        (-0.7..=-0.3).contains(&fit.slope),
        format!("slope {:.3} (95% CI [{:.3}, {:.3}]); {table}", fit.slope, fit.ci_low, fit.ci_high),
    )
}

// 9 -------------------------------------------------------------------------

fn unconfined_exact() -> Outcome {
    let (gamma, kt, u) = (2.0f64, 1.0f64, 1.0f64);
    let h = 1e-3;
    let rec = contraction(json!({
        "model": {"dimension": 1, "gamma": gamma, "u": u, "external": {"kind": "zero"}, "interaction": {"kind": "unconfined", "k_tilde": kt}},
        "integrator": {"step": h, "horizon": 20.0, "seed": 9},
        "experiment": "unconfined_contract",
        "replicas": 64,
        "dumps": 100,
        "initial": {"kind": "gaussian", "mean": {"x": [0.0], "y": [0.0]}, "std": 1.0},
        "tolerance": {"relative": 10.0 * h}
    }));
    let expected = (gamma / 16.0).min(kt * u / (4.0 * gamma));
    Outcome::new(
        rec.inequality_holds == Some(true) && (rec.theory_rate - expected).abs() <= 1e-15,
        format!("rate {} (expected {expected}), max excess {:.2e}", rec.theory_rate, max_excess(&rec)),
    )
}

// 10 ------------------------------------------------------------------------

fn moment_control() -> Outcome {
    let rec = run_moments(&config(json!({
        "model": {"dimension": 1, "gamma": 10.0, "u": 1.0, "external": {"kind": "double_well", "beta": 1.0}},
        "integrator": {"horizon": 50.0, "seed": 1},
        "experiment": "moments",
        "replicas": 1000,
        "dumps": 100,
        "initial": {"kind": "gaussian", "mean": {"x": [0.0], "y": [0.0]}, "std": 1.0}
    })))
    .expect("moments run");
    let tail_ratio = |v: Vec<f64>| {
        let mut t = v[v.len() / 2..].to_vec();
        let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        t.sort_by(f64::total_cmp);
        max / t[t.len() / 2]
    };
    let ex2 = tail_ratio(rec.moments.iter().map(|m| m.ex2).collect());
    let ly = tail_ratio(rec.moments.iter().map(|m| m.lyapunov).collect());
    Outcome::new(
        rec.plateau == Some(true) && ex2 <= 1.05,
        format!("last-half max/median: E|X|^2 {ex2:.4}, Lyapunov {ly:.4} (limit 1.05)"),
    )
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "strongly convex exact check", limit: Duration::from_secs(5), run: strongly_convex_exact },
        Criterion { id: 2, name: "spectral gap order", limit: Duration::from_secs(10), run: spectral_gap_order },
        Criterion { id: 3, name: "constants pipeline", limit: Duration::from_secs(30), run: constants_pipeline },
        Criterion { id: 4, name: "metric axioms", limit: Duration::from_secs(10), run: metric_axioms },
        Criterion { id: 5, name: "coupling validity", limit: Duration::from_secs(120), run: coupling_validity },
        Criterion { id: 6, name: "double-well contraction", limit: Duration::from_secs(300), run: double_well_contraction },
        Criterion { id: 7, name: "nonlinear contraction", limit: Duration::from_secs(180), run: nonlinear_contraction },
        Criterion { id: 8, name: "propagation of chaos", limit: Duration::from_secs(900), run: propagation_of_chaos },
        Criterion { id: 9, name: "unconfined exact check", limit: Duration::from_secs(5), run: unconfined_exact },
        Criterion { id: 10, name: "moment control", limit: Duration::from_secs(120), run: moment_control },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let out = (c.run)();
        let took = start.elapsed();
        let in_time = took <= c.limit;
        let pass = out.pass && in_time;
        failed += !pass as usize;
        let timing = if in_time { String::new() } else { format!(" [over the {:?} limit]", c.limit) };
        println!(
            "{} criterion {:>2} {}: {} ({:.2} s){timing}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            out.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
