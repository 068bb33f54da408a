use constrank::aharmonic::*;
use constrank::polyfield::{LocalField, PolyField};
use constrank::spectral::{apply_operator, GridSpec, PeriodicField, SpectralProjector};
use constrank::symbol::DiffOperator;

fn sym_form(op: &DiffOperator) -> BilinearFormA {
    // identity plus a symmetric coupling between the diagonal entries
    let mut m = vec![0.0; 16];
    for i in 0..4 {
        m[i * 4 + i] = 1.0;
    }
    m[3] = 0.4;
    m[12] = 0.4;
    m[5] = 1.5;
    BilinearFormA::new(m, op).unwrap()
}

#[test]
fn identity_gradient_single_mode() {
    let g = GridSpec::unit(2, 32).unwrap();
    let grad = DiffOperator::gradient(2).unwrap();
    let h0 = PeriodicField::from_fn(g, 1, |x, o| {
        o[0] = (2.0 * std::f64::consts::PI * (2.0 * x[0] + x[1])).sin()
    });
    let datum = apply_operator(&grad, &h0).unwrap();
    let a = BilinearFormA::identity(&grad).unwrap();
    let s = solve_a_harmonic(&a, &grad, None, &datum, &CgOptions::default()).unwrap();
    assert!(s.field.add(&h0).max_abs() < 1e-10);
    assert!(s.iterations <= 2);
}

#[test]
fn zero_datum_gives_zero() {
    let g = GridSpec::unit(3, 16).unwrap();
    let curl = DiffOperator::curl(3).unwrap();
    let a = BilinearFormA::identity(&curl).unwrap();
    let s = solve_a_harmonic(&a, &curl, None, &PeriodicField::zeros(g, 3), &CgOptions::default()).unwrap();
    assert_eq!(s.field.max_abs(), 0.0);
}

#[test]
fn galerkin_orthogonality_and_linearity() {
    let g = GridSpec::unit(2, 32).unwrap();
    let sg = DiffOperator::sym_gradient(2).unwrap();
    let a = sym_form(&sg);
    assert!(a.lambda > 0.0 && a.big_lambda >= a.lambda);
    let f1 = PeriodicField::random_band_limited(g, 4, 5, 1);
    let f2 = PeriodicField::random_band_limited(g, 4, 5, 2);
    let opts = CgOptions::default();
    let v1 = solve_a_harmonic(&a, &sg, None, &f1, &opts).unwrap();
    let v2 = solve_a_harmonic(&a, &sg, None, &f2, &opts).unwrap();
    let res = galerkin_residual(&a, &sg, &v1.field, &f1, 100, 3).unwrap();
    assert!(res < 1e-9, "{res}");
    let v12 = solve_a_harmonic(&a, &sg, None, &f1.axpy(-2.5, &f2), &opts).unwrap();
    let sup = v1.field.axpy(-2.5, &v2.field);
    assert!(v12.field.sub(&sup).max_abs() < 1e-10);
}

#[test]
fn potential_constraint_holds() {
    let g = GridSpec::unit(3, 16).unwrap();
    let curl = DiffOperator::curl(3).unwrap();
    let c = constrank::symbol::build_potential(&curl).unwrap().operator.unwrap();
    let a = BilinearFormA::identity(&curl).unwrap();
    let datum = PeriodicField::random_band_limited(g, 3, 3, 4);
    let v = solve_a_harmonic(&a, &curl, Some(&c), &datum, &CgOptions::default()).unwrap();
    assert!(constrank::spectral::c_star_residual(&curl, &v.field).unwrap() < 1e-10);
    assert!(solve_a_harmonic(&a, &curl, Some(&curl), &datum, &CgOptions::default()).is_err());
}

#[test]
fn perturbation_estimate_has_unit_slope() {
    let g = GridSpec::unit(2, 32).unwrap();
    let sg = DiffOperator::sym_gradient(2).unwrap();
    let a = sym_form(&sg);
    let mut delta = vec![0.0; 16];
    delta[0] = 1.0;
    delta[6] = 0.5;
    delta[9] = 0.5;
    let datum = PeriodicField::random_band_limited(g, 4, 4, 9);
    let r = perturbation_study(&a, &delta, &[1e-1, 1e-2, 1e-3], &sg, &datum, &CgOptions::default()).unwrap();
    assert!((r.slope - 1.0).abs() < 0.1, "{}", r.slope);
    let (lo, hi) = r.constants.iter().fold((f64::MAX, 0.0f64), |(l, h), c| (l.min(*c), h.max(*c)));
    assert!(hi / lo < 1.5);
}

fn rot() -> DiffOperator {
    DiffOperator::curl(2).unwrap()
}

fn harmonic_poly(a: &BilinearFormA, op: &DiffOperator) -> PolyField {
    let c = constrank::symbol::build_potential(op).unwrap().operator;
    let basis = a_harmonic_polynomials(a, op, c.as_ref(), 3).unwrap();
    let mut h = PolyField::zero(2, op.dim_from(), 3);
    for (i, b) in basis.iter().enumerate() {
        h = h.add(&b.scale(0.3 * ((i as f64) * 1.7).sin())).unwrap();
    }
    h
}

#[test]
fn exact_harmonic_is_recovered() {
    let g = GridSpec::unit(2, 64).unwrap();
    let grad = DiffOperator::gradient(2).unwrap();
    let a = BilinearFormA::new(vec![2.0, 0.3, 0.3, 1.0], &grad).unwrap();
    let h = harmonic_poly(&a, &grad);
    let center = [0.5, 0.5];
    let w = LocalField::with_poly(PeriodicField::zeros(g, 1), h.clone(), &center).unwrap();
    let r = harmonic_approx_experiment(&w, &a, &grad, None, &center, 0.25, 1.0, &ApproxOptions::default())
        .unwrap();
    assert!(r.modular_distance < 1e-10, "{}", r.modular_distance);
    assert!(r.delta < 1e-6, "{}", r.delta);
    assert!(r.h.sub(&h).unwrap().max_coeff() < 1e-8);
}

#[test]
fn noise_sweep_is_monotone() {
    let g = GridSpec::unit(2, 64).unwrap();
    let op = rot();
    let a = BilinearFormA::identity(&op).unwrap();
    let coimage = SpectralProjector::coimage_of(&op).unwrap();
    let noise = coimage.apply(&PeriodicField::random_band_limited(g, 2, 12, 5)).unwrap();
    let center = [0.5, 0.5];
    let h = harmonic_poly(&a, &op);
    let gamma = 0.5;
    let mut prev = f64::INFINITY;
    for eta in [1e-1, 1e-2, 1e-3] {
        let w = LocalField::with_poly(noise.scale(eta * gamma), h.scale(gamma), &center).unwrap();
        let r = harmonic_approx_experiment(&w, &a, &op, None, &center, 0.25, gamma, &ApproxOptions::default())
            .unwrap();
        assert!(r.modular_distance < prev);
        prev = r.modular_distance;
    }
}

#[test]
fn random_fields_have_bounded_harmonic_energy() {
    let g = GridSpec::unit(2, 32).unwrap();
    let op = rot();
    let a = BilinearFormA::identity(&op).unwrap();
    let coimage = SpectralProjector::coimage_of(&op).unwrap();
    let center = [0.5, 0.5];
    let mask = constrank::spectral::BallMask::new(g, &center, 0.3).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let raw = coimage.apply(&PeriodicField::random_band_limited(g, 2, 4, seed)).unwrap();
        let w = LocalField::periodic(raw);
        let s = scale_to_energy(&w, &op, &mask, 1.0).unwrap();
        let w = LocalField::periodic(w.periodic.scale(s));
        let r = harmonic_approx_experiment(&w, &a, &op, None, &center, 0.3, 1.0, &ApproxOptions::default())
            .unwrap();
        assert!((r.w_energy - 1.0).abs() < 1e-9);
        assert!(r.delta.is_finite() && r.modular_distance.is_finite());
        worst = worst.max(r.h_energy);
    }
    assert!(worst <= ApproxOptions::default().k_bound, "{worst}");
}

#[test]
fn hypothesis_violation_is_reported() {
    let g = GridSpec::unit(2, 32).unwrap();
    let div = DiffOperator::divergence(2).unwrap();
    let a = BilinearFormA::identity(&div).unwrap();
    let w = LocalField::periodic(PeriodicField::random_band_limited(g, 2, 4, 1));
    let err = harmonic_approx_experiment(&w, &a, &div, None, &[0.5, 0.5], 0.25, 1.0, &ApproxOptions::default());
    assert!(matches!(err, Err(constrank::LabError::HypothesisViolated(_))));
}
