use constrank::spectral::{
    apply_operator, decompose, project_afree, riesz_potential, GridSpec, PeriodicField,
    SpectralProjector,
};
use constrank::symbol::DiffOperator;
use constrank::LabError;

fn grid3() -> GridSpec {
    GridSpec::unit(3, 16).unwrap()
}

#[test]
fn div_of_curl_vanishes() {
    let g = grid3();
    let w = PeriodicField::random_band_limited(g, 3, 6, 11);
    let curl = DiffOperator::curl(3).unwrap();
    let div = DiffOperator::divergence(3).unwrap();
    let r = apply_operator(&div, &apply_operator(&curl, &w).unwrap()).unwrap();
    assert!(r.max_abs() < 1e-10);
}

#[test]
fn projection_is_afree_idempotent_and_orthogonal() {
    let g = grid3();
    let div = DiffOperator::divergence(3).unwrap();
    let p = SpectralProjector::kernel_of(&div).unwrap();
    let f = PeriodicField::random_band_limited(g, 3, 7, 1).shift(&[0.3, -0.1, 0.2]);
    let pf = p.apply(&f).unwrap();
    assert!(apply_operator(&div, &pf).unwrap().max_abs() < 1e-10);
    assert!(p.apply(&pf).unwrap().sub(&pf).l2_norm() < 1e-12 * f.l2_norm());
    let rest = f.sub(&pf);
    let split = pf.inner(&pf) + rest.inner(&rest);
    assert!((split / f.inner(&f) - 1.0).abs() < 1e-9);
    let g2 = PeriodicField::random_band_limited(g, 3, 7, 2);
    let lhs = pf.inner(&g2);
    let rhs = f.inner(&p.apply(&g2).unwrap());
    assert!((lhs - rhs).abs() < 1e-10 * f.l2_norm() * g2.l2_norm());
    assert!(project_afree(&div, &pf).unwrap().sub(&pf).l2_norm() < 1e-12 * pf.l2_norm());
}

#[test]
fn gradient_fields_project_to_their_mean() {
    let g = grid3();
    let h = PeriodicField::random_band_limited(g, 1, 5, 4);
    let grad = apply_operator(&DiffOperator::gradient(3).unwrap(), &h)
        .unwrap()
        .shift(&[1.0, 2.0, 3.0]);
    let p = project_afree(&DiffOperator::divergence(3).unwrap(), &grad).unwrap();
    let c = PeriodicField::constant(g, &[1.0, 2.0, 3.0]);
    assert!(p.sub(&c).max_abs() < 1e-10);
}

#[test]
fn decompose_recovers_curl_potential() {
    let g = grid3();
    let div = DiffOperator::divergence(3).unwrap();
    let curl = DiffOperator::curl(3).unwrap();
    let w = PeriodicField::random_band_limited(g, 3, 6, 5);
    let bw = apply_operator(&curl, &w).unwrap();
    let f = bw.shift(&[0.5, 0.0, -1.0]);
    let d = decompose(&div, &curl, &f).unwrap();
    let bu = apply_operator(&curl, &d.u).unwrap();
    assert!(bu.sub(&bw).max_abs() < 1e-9);
    assert!(d.s_deviation < 1e-9);
    assert!(d.c_star_residual < 1e-10);
    let s_mean = d.s.mean();
    assert!((s_mean[0] - 0.5).abs() < 1e-12 && (s_mean[2] + 1.0).abs() < 1e-12);
}

#[test]
fn decompose_constant_field() {
    let g = grid3();
    let f = PeriodicField::constant(g, &[1.0, 0.0, 2.0]);
    let d = decompose(
        &DiffOperator::divergence(3).unwrap(),
        &DiffOperator::curl(3).unwrap(),
        &f,
    )
    .unwrap();
    assert!(d.u.max_abs() < 1e-14);
    assert!(d.s.sub(&f).max_abs() < 1e-14);
}

#[test]
fn decompose_rejects_non_afree_input() {
    let g = grid3();
    let f = PeriodicField::random_band_limited(g, 3, 4, 8);
    let err = decompose(
        &DiffOperator::divergence(3).unwrap(),
        &DiffOperator::curl(3).unwrap(),
        &f,
    );
    assert!(matches!(err, Err(LabError::NotAFree { .. })));
}

#[test]
fn riesz_round_trip() {
    let g = GridSpec::unit(2, 32).unwrap();
    let f = PeriodicField::random_band_limited(g, 2, 10, 3);
    let back = riesz_potential(-1.0, &riesz_potential(1.0, &f));
    assert!(back.sub(&f).max_abs() < 1e-10);
    assert!(riesz_potential(0.0, &f).sub(&f).max_abs() < 1e-12);
}
