use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinlang::linalg::SymMatrix;
use kinlang::model::{
    double_well_radius, gradient_error_external, gradient_error_interaction, validate_assumptions, ExternalForce, InteractionForce,
    ModelSpec, Perturbation,
};

fn point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[test]
fn external_forces_are_potential_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let forces = [(ExternalForce::quadratic(k).unwrap(), 2), (ExternalForce::double_well(1.5).unwrap(), 1)];
    for (f, d) in &forces {
        for _ in 0..1000 {
            let x = point(&mut rng, *d, 4.0);
            let err = gradient_error_external(f, &x);
            assert!(err <= 1e-6, "{:?} at {x:?}: {err}", f.kind);
        }
    }
}

#[test]
fn interaction_forces_are_potential_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 2;
    let forces = [
        InteractionForce::linear(0.7),
        InteractionForce::mollified_coulomb(1.3, 2.0, 0.5).unwrap(),
        InteractionForce::mollified_log(2.0, 0.8).unwrap(),
        InteractionForce::unconfined(SymMatrix::identity(d), Perturbation::Sine { amplitude: 0.3, frequency: 2.0 }).unwrap(),
    ];
    for f in &forces {
        for _ in 0..1000 {
            let (x, z) = (point(&mut rng, d, 3.0), point(&mut rng, d, 3.0));
            let err = gradient_error_interaction(f, &x, &z);
            assert!(err <= 1e-6, "{:?} at {x:?}, {z:?}: {err}", f.kind);
        }
    }
}

#[test]
fn double_well_nonconvex_part_is_monotone_beyond_the_radius() {
    let f = ExternalForce::double_well(1.0).unwrap();
    let r = double_well_radius(1.0 / 3.0);
    assert_eq!(f.splitting.r, r);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut gx, mut gy) = ([0.0], [0.0]);
    let mut checked = 0;
    while checked < 10_000 {
        let (x, y): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        if (x - y).abs() < r {
            continue;
        }
        f.g_into(&[x], &mut gx);
        f.g_into(&[y], &mut gy);
        assert!((gx[0] - gy[0]) * (x - y) <= 1e-12, "pair ({x}, {y})");
        checked += 1;
    }
}

#[test]
fn evaluation_is_pure_and_keeps_dimension() {
    let spec = ModelSpec::new(3, 1.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(3)).unwrap(), InteractionForce::linear(0.2)).unwrap();
    let x = [0.1, -2.0, 3.0];
    let a = spec.eval_external(&x).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, spec.eval_external(&x).unwrap());
    assert_eq!(spec.eval_interaction(&x, &[1.0, 1.0, 1.0]).unwrap().len(), 3);
    assert!(spec.eval_external(&[1.0]).is_err());
}

#[test]
fn declared_constants_are_checked() {
    let dw = ModelSpec::new(1, 10.0, 1.0, ExternalForce::double_well(1.0).unwrap(), InteractionForce::none()).unwrap();
    assert!(validate_assumptions(&dw, 2000, 4).ok());
    let quad = ModelSpec::new(2, 1.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(2)).unwrap(), InteractionForce::none()).unwrap();
    assert!(validate_assumptions(&quad, 2000, 5).ok());
    let under = ModelSpec::new(1, 1.0, 1.0, ExternalForce::quadratic(SymMatrix::identity(1)).unwrap(), InteractionForce::linear(2.0).with_lipschitz(1.0)).unwrap();
    let rep = validate_assumptions(&under, 100, 6);
    assert!(!rep.ok());
    assert_eq!(rep.violations[0].sample, 0);
}
