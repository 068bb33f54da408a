use constrank::integrands::{eval_e, Integrand};
use constrank::polyfield::{polynomial_kernel, LocalField, PolyField};
use constrank::regularity::*;
use constrank::solver::{minimize, Constraint, Init, MinimizeProblem, SolverOptions};
use constrank::spectral::{apply_pseudoinverse, BallMask, GridSpec, PeriodicField, SpectralProjector};
use constrank::symbol::{build_potential, DiffOperator};
use std::f64::consts::PI;

fn rot() -> DiffOperator {
    DiffOperator::curl(2).unwrap()
}

/// Mean of `E(G·y)` over the disc of radius `r` by polar midpoint quadrature.
fn disc_mean_oracle(g: f64, r: f64) -> f64 {
    let (nr, nt) = (2000, 2000);
    let mut acc = 0.0;
    for i in 0..nr {
        let rho = (i as f64 + 0.5) * r / nr as f64;
        for j in 0..nt {
            let t = (j as f64 + 0.5) * 2.0 * PI / nt as f64;
            acc += eval_e(&[g * rho * t.cos()]) * rho;
        }
    }
    acc * (r / nr as f64) * (2.0 * PI / nt as f64) / (PI * r * r)
}

#[test]
fn excess_of_linear_field_matches_quadrature() {
    let g = GridSpec::unit(2, 128).unwrap();
    let center = [0.5, 0.5];
    let grad = [3.0, 4.0];
    let w = LocalField::with_poly(PeriodicField::zeros(g, 1), PolyField::linear(2, &grad), &center).unwrap();
    let r = 0.25;
    let e = excess_local(&w, &center, r, 0.3).unwrap();
    let expected = r.powf(0.6) + disc_mean_oracle(5.0, r);
    assert!((e - expected).abs() < 1e-3, "{e} vs {expected}");
}

#[test]
fn larger_alpha_lowers_the_radius_term() {
    let g = GridSpec::unit(2, 64).unwrap();
    let w = PeriodicField::random_band_limited(g, 2, 3, 1);
    let a = excess(&w, &[0.5, 0.5], 0.3, 0.2).unwrap();
    let b = excess(&w, &[0.5, 0.5], 0.3, 0.4).unwrap();
    assert!(b < a);
    assert!(((a - b) - (0.3f64.powf(0.4) - 0.3f64.powf(0.8))).abs() < 1e-14);
}

#[test]
fn convex_baseline_scan() {
    let g = GridSpec::unit(2, 512).unwrap();
    let p = MinimizeProblem {
        integrand: Integrand::scaled_e(1.0, 2),
        constraint: Constraint::AFree {
            op: DiffOperator::divergence(2).unwrap(),
            mean: vec![0.4, -0.2],
        },
        grid: g,
        init: Init::Zero,
    };
    let m = minimize(&p, &SolverOptions::default()).unwrap();
    let centers = vec![vec![0.5, 0.5], vec![0.25, 0.7]];
    let opts = ScanOptions::default();
    let r = excess_scan(&m.field, &centers, 0.35, &opts).unwrap();
    for c in &r.centers {
        assert!((c.fitted_exponent - 2.0 * opts.alpha).abs() < 1e-9);
        assert!(c.decay_steps.iter().all(|&b| b) && c.regular);
    }
    assert!(r.pass);
    let bad = ScanOptions { tau: 0.1, ..opts };
    assert!(excess_scan(&m.field, &centers, 0.35, &bad).is_err());
}

#[test]
fn two_phase_field_is_flagged_at_interface() {
    let g = GridSpec::unit(2, 512).unwrap();
    // jump normal to x1 along the second component keeps the field divergence free
    let w = two_phase_field(g, &[0.0, -2.0], &[0.0, 2.0], 0, 0.8).unwrap();
    let centers = vec![vec![0.8, 0.5], vec![0.4, 0.5]];
    let r = excess_scan(&w, &centers, 0.35, &ScanOptions::default()).unwrap();
    assert!(!r.centers[0].regular);
    assert!(r.centers[0].excess.iter().all(|&e| e > eval_e(&[2.0]) * 0.9));
    assert!(r.centers[1].regular);
}

#[test]
fn smooth_minimizer_decays() {
    let g = GridSpec::unit(2, 64).unwrap();
    let p = MinimizeProblem {
        integrand: Integrand::weighted(1.0, 0.5, 1.0, 2),
        constraint: Constraint::AFree {
            op: DiffOperator::divergence(2).unwrap(),
            mean: vec![0.5, 0.3],
        },
        grid: g,
        init: Init::Zero,
    };
    let opts = SolverOptions {
        tol: 1e-7,
        record_history: false,
        ..Default::default()
    };
    let m = minimize(&p, &opts).unwrap();
    assert!(m.converged);
    assert!(m.summary().oscillation > 1e-3);
    let centers = vec![vec![0.5, 0.5], vec![0.1, 0.8], vec![0.3, 0.2]];
    let fine = m.field.resample(512).unwrap();
    let r = excess_scan(&fine, &centers, 0.35, &ScanOptions::default()).unwrap();
    for c in &r.centers {
        assert!(c.decay_steps.iter().all(|&b| b), "{:?}", c.excess);
    }
}

#[test]
fn fit_polynomial_curl_on_grid() {
    let curl = DiffOperator::curl(3).unwrap();
    let w = [0.5, -1.0, 2.0];
    let a = fit_polynomial(&w, &curl).unwrap();
    assert_eq!(a.degree(), 1);
    let g = GridSpec::unit(3, 16).unwrap();
    let u = LocalField::with_poly(PeriodicField::zeros(g, 3), a, &[0.5, 0.5, 0.5]).unwrap();
    let mask = BallMask::new(g, &[0.5, 0.5, 0.5], 0.3).unwrap();
    for v in u.apply_on(&curl, &mask).unwrap() {
        for (x, y) in v.iter().zip(&w) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

fn gradient_minimizer(g: GridSpec, datum: [f64; 2]) -> (PeriodicField, Integrand) {
    let grad = DiffOperator::gradient(2).unwrap();
    let p = MinimizeProblem {
        integrand: Integrand::weighted(1.0, 0.8, 1.0, 2),
        constraint: Constraint::Potential {
            op: grad.clone(),
            datum: datum.to_vec(),
        },
        grid: g,
        init: Init::Zero,
    };
    let opts = SolverOptions {
        tol: 1e-8,
        record_history: false,
        ..Default::default()
    };
    let m = minimize(&p, &opts).unwrap();
    assert!(m.converged);
    let per = apply_pseudoinverse(&grad, &m.field.shift(&[-datum[0], -datum[1]])).unwrap();
    (per, p.integrand)
}

trait IntoLocal {
    fn into_local(self, datum: [f64; 2], center: &[f64]) -> LocalField;
}

impl IntoLocal for PeriodicField {
    fn into_local(self, datum: [f64; 2], center: &[f64]) -> LocalField {
        LocalField::with_poly(self, PolyField::linear(2, &datum), center).unwrap()
    }
}

#[test]
fn caccioppoli_examples() {
    let g = GridSpec::unit(2, 64).unwrap();
    let grad = DiffOperator::gradient(2).unwrap();
    let center = [0.5, 0.5];
    // B u constant, a matching: left side vanishes
    let u = PeriodicField::zeros(g, 1).into_local([1.0, -0.5], &center);
    let e = Integrand::scaled_e(1.0, 2);
    let r = verify_caccioppoli(&u, &e, &grad, &center, 0.3, None, &CaccioppoliOptions::default()).unwrap();
    assert!(r.lhs < 1e-20 && r.ratio < 1e-12);

    let center = [0.3, 0.15];
    let datum = [0.6, -0.3];
    let (per, f) = gradient_minimizer(g, datum);
    let per = per.resample(256).unwrap();
    let u = per.into_local(datum, &center);
    let mut ratios = Vec::new();
    for radius in [0.3, 0.15, 0.075] {
        let r = verify_caccioppoli(&u, &f, &grad, &center, radius, None, &CaccioppoliOptions::default()).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
        ratios.push(r.ratio);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    assert!(hi / lo < 1.2 / 0.8, "{ratios:?}");

    let matched = matched_polynomial(&u, &grad, &center, 0.3).unwrap();
    let shifted = matched.add(&PolyField::linear(2, &[0.5, 0.5])).unwrap();
    let good = verify_caccioppoli(&u, &f, &grad, &center, 0.3, Some(&matched), &CaccioppoliOptions::default()).unwrap();
    let bad = verify_caccioppoli(&u, &f, &grad, &center, 0.3, Some(&shifted), &CaccioppoliOptions::default()).unwrap();
    assert!(bad.lhs > good.lhs);

    let noisy = LocalField::with_poly(
        PeriodicField::random_band_limited(g, 1, 4, 3).scale(0.1),
        PolyField::linear(2, &datum),
        &center,
    )
    .unwrap();
    assert!(matches!(
        verify_caccioppoli(&noisy, &f, &grad, &center, 0.3, None, &CaccioppoliOptions::default()),
        Err(constrank::LabError::NotExtremal(_))
    ));
}

fn kernel_combo(op: &DiffOperator, degree: u32) -> PolyField {
    let c = build_potential(op).unwrap().operator;
    let basis = polynomial_kernel(op, c.as_ref(), degree).unwrap();
    let mut h = PolyField::zero(2, op.dim_from(), degree);
    for (i, b) in basis.iter().enumerate() {
        h = h.add(&b.scale(1.0 + 0.5 * (i as f64).cos())).unwrap();
    }
    h
}

#[test]
fn poincare_kernel_inputs_vanish() {
    let g = GridSpec::unit(2, 64).unwrap();
    let center = [0.5, 0.5];
    for op in [rot(), DiffOperator::sym_gradient(2).unwrap()] {
        let h = kernel_combo(&op, 3);
        let u = LocalField::with_poly(PeriodicField::constant(g, &[0.3, -0.1]), h, &center).unwrap();
        let r = verify_poincare_modular(&u, &op, None, &center, 0.3, 0.5, 1.5, &KernelOptions::default()).unwrap();
        assert!(r.lhs < 1e-10, "{}", r.lhs);
        let k = verify_korn_vp(&u, &op, None, &center, 0.3, 0.5, 1.5, &KernelOptions::default()).unwrap();
        assert!(k.report.lhs < 1e-10, "{}", k.report.lhs);
    }
}

fn coimage_field(op: &DiffOperator, g: GridSpec, seed: u64, band: usize) -> PeriodicField {
    SpectralProjector::coimage_of(op)
        .unwrap()
        .apply(&PeriodicField::random_band_limited(g, op.dim_from(), band, seed))
        .unwrap()
}

#[test]
fn poincare_theta_and_amplitude_sweeps() {
    let g = GridSpec::unit(2, 64).unwrap();
    let op = rot();
    let center = [0.5, 0.5];
    let mode = SpectralProjector::coimage_of(&op)
        .unwrap()
        .apply(&PeriodicField::from_fn(g, 2, |x, o| {
            o[0] = (2.0 * PI * (x[0] + 2.0 * x[1])).sin();
            o[1] = (2.0 * PI * x[0]).cos();
        }))
        .unwrap();
    for theta in [0.5, 0.7, 0.9] {
        let r = verify_poincare_modular(&LocalField::periodic(mode.clone()), &op, None, &center, 0.3, theta, 1.5, &KernelOptions::default())
            .unwrap();
        assert!(r.ratio.is_finite() && r.pass);
    }
    let u = coimage_field(&op, g, 4, 4);
    for amp in [0.1, 1.0, 10.0] {
        let r = verify_poincare_modular(&LocalField::periodic(u.scale(amp)), &op, None, &center, 0.3, 0.5, 1.2, &KernelOptions::default())
            .unwrap();
        assert!(r.ratio.is_finite() && r.pass, "{}", r.ratio);
    }
    let bad = KernelOptions {
        min_rcond: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        verify_poincare_modular(&LocalField::periodic(u.clone()), &op, None, &center, 0.3, 0.5, 1.2, &bad),
        Err(constrank::LabError::KernelBasisDeficient(_))
    ));
    assert!(verify_poincare_modular(&LocalField::periodic(u), &op, None, &center, 0.3, 0.5, 2.0, &KernelOptions::default()).is_err());
}

#[test]
fn korn_reduces_to_l2_for_p_two() {
    let g = GridSpec::unit(2, 64).unwrap();
    let op = DiffOperator::sym_gradient(2).unwrap();
    let u = LocalField::periodic(coimage_field(&op, g, 7, 4));
    let center = [0.4, 0.6];
    let k2 = verify_korn_vp(&u, &op, None, &center, 0.3, 0.5, 2.0, &KernelOptions::default()).unwrap();
    assert!((k2.report.ratio - k2.l2_ratio).abs() < 1e-9 * k2.l2_ratio);
    let k15 = verify_korn_vp(&u, &op, None, &center, 0.3, 0.5, 1.5, &KernelOptions::default()).unwrap();
    let k3 = verify_korn_vp(&u, &op, None, &center, 0.3, 0.5, 3.0, &KernelOptions::default()).unwrap();
    assert!(k15.report.ratio.is_finite() && k3.report.ratio.is_finite());
    assert!(k15.report.ratio != k3.report.ratio);
}

#[test]
fn poincare_rejects_fields_outside_the_coimage() {
    let g = GridSpec::unit(2, 64).unwrap();
    let u = LocalField::periodic(PeriodicField::random_band_limited(g, 2, 4, 1));
    assert!(verify_poincare_modular(&u, &rot(), None, &[0.5, 0.5], 0.3, 0.5, 1.5, &KernelOptions::default()).is_err());
}
