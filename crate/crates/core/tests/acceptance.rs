//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use constrank::aharmonic::{galerkin_residual, perturbation_study, solve_a_harmonic, BilinearFormA, CgOptions};
use constrank::harness::{batch, run, Command, FieldSource, Manifest, Params, RunConfig, RunOptions};
use constrank::integrands::{e_equivalence_scan, modular_mean_bound, IntegrandConfig};
use constrank::polyfield::{polynomial_kernel, LocalField, PolyField};
use constrank::poly::{rat, Rational};
use constrank::regularity::{excess_scan, two_phase_field, verify_korn_vp, verify_poincare_modular, KernelOptions, ScanOptions};
use constrank::solver::{minimize, Constraint, Init, MinimizeProblem, SolverOptions};
use constrank::spectral::{apply_operator, decompose, project_afree, BallMask, GridSpec, PeriodicField};
use constrank::symbol::{
    build_potential, check_constant_rank, decell_parts, DiffOperator, OperatorSpec, RationalMatrix,
};
use constrank::util::{rng, sub_seed};
use nalgebra::DMatrix;
use rand::Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn suite() -> Vec<DiffOperator> {
    vec![
        DiffOperator::gradient(3).unwrap(),
        DiffOperator::divergence(3).unwrap(),
        DiffOperator::curl(3).unwrap(),
        DiffOperator::sym_gradient(3).unwrap(),
        DiffOperator::laplacian(3).unwrap(),
        DiffOperator::curl(2).unwrap(),
    ]
}

/// Hand-built symbol matrices, independent of the operator tables.
fn oracle_symbol(name: &str, n: usize, xi: &[f64]) -> DMatrix<f64> {
    match (name, n) {
        ("grad", _) => DMatrix::from_column_slice(n, 1, xi),
        ("div", _) => DMatrix::from_row_slice(1, n, xi),
        ("curl", 3) => DMatrix::from_row_slice(3, 3, &[0.0, -xi[2], xi[1], xi[2], 0.0, -xi[0], -xi[1], xi[0], 0.0]),
        ("curl", 2) => DMatrix::from_row_slice(1, 2, &[-xi[1], xi[0]]),
        ("sym_grad", _) => DMatrix::from_fn(n * n, n, |r, c| {
            let (i, j) = (r / n, r % n);
            0.5 * (if i == c { xi[j] } else { 0.0 } + if j == c { xi[i] } else { 0.0 })
        }),
        ("laplacian", _) => DMatrix::from_element(1, 1, xi.iter().map(|x| x * x).sum()),
        _ => unreachable!(),
    }
}

fn criterion_1() -> Check {
    let expected = [("grad", 1), ("div", 1), ("curl", 2), ("sym_grad", 3), ("laplacian", 1), ("curl", 1)];
    let mut r = rng(1);
    for (op, (name, rank)) in suite().iter().zip(expected) {
        let rep = ok(check_constant_rank(op, 200))?;
        let n = op.dim_n();
        let xi: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let oracle = oracle_symbol(name, n, &xi).rank(1e-10);
        ensure!(rep.is_constant_rank && rep.rank == rank && oracle == rank, "{name}: rank {} vs {rank}", rep.rank);
        let m = op.symbol().eval_f64(&xi);
        ensure!((m - oracle_symbol(name, n, &xi)).amax() < 1e-14, "{name}: symbol differs from hand-built matrix");
    }
    let mut coeffs = BTreeMap::new();
    let mut a = RationalMatrix::zeros(2, 2);
    a.set(0, 0, rat(1, 1));
    let mut b = RationalMatrix::zeros(2, 2);
    b.set(1, 1, rat(1, 1));
    coeffs.insert(vec![1, 0], a);
    coeffs.insert(vec![0, 1], b);
    let diag = ok(DiffOperator::new(2, 2, 2, 1, coeffs))?;
    let rep = ok(check_constant_rank(&diag, 200))?;
    let w = rep.witness.clone().ok_or("diag(ξ₁,ξ₂) accepted")?;
    ensure!(!rep.is_constant_rank && (w[0] == 0.0 || w[1] == 0.0), "bad witness {w:?}");
    Ok(format!("5 suite ranks match, diag rejected at {w:?}"))
}

fn criterion_2() -> Check {
    let mut worst = 0.0f64;
    for op in suite() {
        let rank = ok(check_constant_rank(&op, 200))?.rank;
        let parts = ok(decell_parts(&op, rank))?;
        ensure!(parts.penrose_identities_hold(), "{:?}: Penrose identities fail", op.name());
        let pinv = parts.pseudoinverse();
        let k = op.order() as i32;
        ensure!(pinv.degree == -k, "degree {} != {}", pinv.degree, -k);
        let sym = op.symbol();
        let n = op.dim_n();
        let xi_q: Vec<Rational> = (0..n).map(|i| rat(2 * i as i64 + 1, 3)).collect();
        let xi_3: Vec<Rational> = xi_q.iter().map(|x| x * rat(3, 1)).collect();
        let (p1, p3) = (pinv.eval_rational(&xi_q).unwrap(), pinv.eval_rational(&xi_3).unwrap());
        let f = rat(1, 3i64.pow(k as u32));
        ensure!(
            p1.iter().flatten().zip(p3.iter().flatten()).all(|(a, b)| b == &(a * &f)),
            "exact homogeneity fails"
        );
        let mut r = rng(sub_seed(2, n as u64 + op.dim_to() as u64));
        for _ in 0..1000 {
            let xi: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let t: f64 = r.random_range(0.5..2.0);
            let b = sym.eval_f64(&xi);
            let bp = pinv.eval_f64(&xi);
            let scaled: Vec<f64> = xi.iter().map(|x| x * t).collect();
            let e1 = (&b * &bp * &b - &b).amax() / b.amax();
            let e2 = (pinv.eval_f64(&scaled) - &bp * t.powi(-k)).amax() / bp.amax();
            let oracle = b.clone().pseudo_inverse(1e-13).map_err(|e| e.to_string())?;
            let e3 = (oracle - &bp).amax() / bp.amax();
            worst = worst.max(e1).max(e2);
            ensure!(e1 < 1e-12 && e2 < 1e-12 && e3 < 1e-10, "float identities fail: {e1:e} {e2:e} {e3:e}");
        }
    }
    Ok(format!("exact identities hold, worst float error {worst:.1e}"))
}

fn criterion_3() -> Check {
    let curl = DiffOperator::curl(3).unwrap();
    let pot = ok(build_potential(&curl))?;
    ensure!(!pot.elliptic && pot.operator.is_some(), "curl has no potential");
    ensure!(curl.symbol().mul(&pot.symbol).is_zero(), "B C is not identically zero");
    let mut r = rng(3);
    for _ in 0..500 {
        let xi: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let c = pot.symbol.eval_f64(&xi);
        let ker = 3 - oracle_symbol("curl", 3, &xi).rank(1e-10);
        ensure!(c.rank(1e-9 * c.amax()) == 1 && ker == 1, "rank C(ξ) != 1 at {xi:?}");
    }
    let grad = ok(build_potential(&DiffOperator::gradient(3).unwrap()))?;
    ensure!(grad.elliptic && grad.operator.is_none() && grad.symbol.is_zero(), "grad potential is not zero");
    Ok("curl: B C = 0 identically, rank C = 1 on 500 samples; grad: C = 0".into())
}

fn criterion_4() -> Check {
    let g = ok(GridSpec::unit(3, 64))?;
    let div = DiffOperator::divergence(3).unwrap();
    let curl = DiffOperator::curl(3).unwrap();
    let f = PeriodicField::random_band_limited(g, 3, 10, 4);
    let pf = ok(project_afree(&div, &f))?;
    let residual = ok(apply_operator(&div, &pf))?.l2_norm() / f.l2_norm();
    let idem = ok(project_afree(&div, &pf))?.sub(&pf).max_abs();
    ensure!(residual < 1e-10 && idem < 1e-12, "residual {residual:e}, idempotence {idem:e}");
    let mean = [0.3, -0.2, 0.5];
    let field = pf.sub(&PeriodicField::constant(g, &pf.mean())).shift(&mean);
    let d = ok(decompose(&div, &curl, &field))?;
    let err = ok(apply_operator(&curl, &d.u))?
        .shift(&mean)
        .sub(&field)
        .max_abs();
    ensure!(err < 1e-9, "reconstruction error {err:e}");
    Ok(format!("64³: residual {residual:.1e}, idempotence {idem:.1e}, reconstruction {err:.1e}"))
}

fn criterion_5() -> Check {
    let g = ok(GridSpec::unit(2, 32))?;
    let mut worst = (0.0f64, 0.0f64);
    let mut r = rng(5);
    for ell in [1.0, 2.0] {
        for trial in 0..5 {
            let op = if trial % 2 == 0 {
                DiffOperator::gradient(2).unwrap()
            } else {
                DiffOperator::sym_gradient(2).unwrap()
            };
            let datum: Vec<f64> = (0..op.dim_to()).map(|_| r.random_range(-2.0..2.0)).collect();
            let f = ok(IntegrandConfig {
                ell,
                ..Default::default()
            }
            .build(op.dim_to(), 2, 1.0))?;
            let p = MinimizeProblem {
                integrand: f,
                constraint: Constraint::Potential {
                    op,
                    datum: datum.clone(),
                },
                grid: g,
                init: Init::Random {
                    seed: 100 + trial,
                    amplitude: 0.5,
                    band: 4,
                },
            };
            let opts = SolverOptions {
                tol: 1e-11,
                record_history: false,
                ..Default::default()
            };
            let m = ok(minimize(&p, &opts))?;
            // oracle: |Ω| ℓ E(F) with E(z) = sqrt(1+|z|²) - 1
            let expected = ell * ((1.0 + datum.iter().map(|x| x * x).sum::<f64>()).sqrt() - 1.0);
            let gap = (m.energy - expected).abs();
            worst = (worst.0.max(gap), worst.1.max(m.el_residual));
            ensure!(m.converged && gap < 1e-9 && m.el_residual < 1e-8, "ℓ={ell}: gap {gap:e}, EL {:e}", m.el_residual);
        }
    }
    Ok(format!("10 runs, worst energy gap {:.1e}, worst EL residual {:.1e}", worst.0, worst.1))
}

fn criterion_6() -> Check {
    let (lo, hi) = e_equivalence_scan(1e-4, 1e4, 10_000);
    ensure!(lo >= 1.0 / 3.0 && hi <= 1.0, "ratio range [{lo}, {hi}]");
    for s in [1e-3f64, 0.5, 1.0, 7.0, 1e3] {
        // cancellation-free form of sqrt(1 + s²) - 1
        let direct = s * s / ((1.0 + s * s).sqrt() + 1.0);
        ensure!((constrank::integrands::e_of_norm(s) - direct).abs() <= 1e-12 * direct, "E({s})");
    }
    let g = ok(GridSpec::unit(2, 32))?;
    let mask = ok(BallMask::new(g, &[0.5, 0.5], 0.3))?;
    let mut tightest = f64::INFINITY;
    for seed in 0..100u64 {
        let amp = 10f64.powf(-2.0 + 4.0 * (seed as f64) / 99.0);
        let f = PeriodicField::random_band_limited(g, 2, 4, seed).scale(amp);
        let b = modular_mean_bound(&f, &mask);
        ensure!(b.lhs <= b.rhs * (1.0 + 1e-12), "seed {seed}: {} > {}", b.lhs, b.rhs);
        tightest = tightest.min(b.rhs / b.lhs);
    }
    Ok(format!("E/min ratio in [{lo:.3}, {hi:.3}], modular bound slack ≥ {tightest:.3}"))
}

fn criterion_7() -> Check {
    let g = ok(GridSpec::unit(2, 32))?;
    let sg = DiffOperator::sym_gradient(2).unwrap();
    let mut m = vec![0.0; 16];
    for i in 0..4 {
        m[i * 4 + i] = 1.0;
    }
    m[3] = 0.4;
    m[12] = 0.4;
    m[5] = 1.5;
    let a = ok(BilinearFormA::new(m, &sg))?;
    let datum = PeriodicField::random_band_limited(g, 4, 5, 1);
    let v = ok(solve_a_harmonic(&a, &sg, None, &datum, &CgOptions::default()))?;
    let res = ok(galerkin_residual(&a, &sg, &v.field, &datum, 100, 3))?;
    ensure!(res < 1e-9, "Galerkin residual {res:e}");
    let mut delta = vec![0.0; 16];
    delta[0] = 1.0;
    delta[6] = 0.5;
    delta[9] = 0.5;
    let rep = ok(perturbation_study(&a, &delta, &[1e-1, 1e-2, 1e-3], &sg, &datum, &CgOptions::default()))?;
    ensure!((rep.slope - 1.0).abs() < 0.1, "slope {}", rep.slope);
    Ok(format!("Galerkin residual {res:.1e}, log-log slope {:.4}", rep.slope))
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

fn ratio_run(command: Command, op: &str, seed: u64, resample: Option<usize>) -> Result<(f64, String), String> {
    let c = RunConfig {
        command,
        name: None,
        dim_n: 2,
        operator: OperatorSpec::Name(op.into()),
        potential: None,
        integrand: None,
        grid: constrank::harness::GridConfig {
            points: 64,
            period: 1.0,
        },
        field: Some(FieldSource::Random { band: 4, amplitude: 1.0 }),
        params: Params {
            resample,
            ..Default::default()
        },
        seed,
        out: None,
    };
    let r = ok(run(&c))?;
    ensure!(r.pass, "{command} {op} seed {seed} failed");
    Ok((r.metrics["ratio"], r.body_string()))
}

fn criterion_8() -> Check {
    let g = ok(GridSpec::unit(2, 64))?;
    let center = [0.5, 0.5];
    let opts = KernelOptions::default();
    let mut worst_kernel = 0.0f64;
    for name in ["curl", "sym_grad"] {
        let op = ok(DiffOperator::builtin(name, 2))?;
        let h = kernel_combo(&op, 3);
        let u = ok(LocalField::with_poly(PeriodicField::constant(g, &[0.3, -0.1]), h, &center))?;
        let p = ok(verify_poincare_modular(&u, &op, None, &center, 0.3, 0.5, 1.5, &opts))?;
        let k = ok(verify_korn_vp(&u, &op, None, &center, 0.3, 0.5, 1.5, &opts))?;
        worst_kernel = worst_kernel.max(p.lhs).max(k.report.lhs);
    }
    ensure!(worst_kernel < 1e-10, "kernel lhs {worst_kernel:e}");
    let mut spread = 0.0f64;
    for command in [Command::VerifyPoincare, Command::VerifyKorn] {
        for op in ["curl", "sym_grad"] {
            for seed in 0..20 {
                let (r64, body) = ratio_run(command, op, seed, None)?;
                let (again, body2) = ratio_run(command, op, seed, None)?;
                ensure!(r64.to_bits() == again.to_bits() && body == body2, "{command} {op} {seed} not reproducible");
                let (r128, _) = ratio_run(command, op, seed, Some(128))?;
                ensure!(r64.is_finite() && r128.is_finite(), "non-finite ratio");
                let rel = (r128 - r64).abs() / r64;
                spread = spread.max(rel);
                ensure!(rel <= 0.5, "{command} {op} seed {seed}: {r64} vs {r128}");
            }
        }
    }
    Ok(format!("kernel lhs {worst_kernel:.1e}; 80 seeded ratios reproducible, max 64↔128 change {:.1}%", spread * 100.0))
}

fn criterion_9() -> Check {
    let coarse = ok(GridSpec::unit(2, 64))?;
    let opts = ScanOptions::default();
    let centers = vec![vec![0.5, 0.5], vec![0.25, 0.7], vec![0.8, 0.1]];
    let div = DiffOperator::divergence(2).unwrap();
    let mut worst = 0.0f64;
    for (i, (ell, mean)) in [(1.0, [0.4, -0.2]), (2.0, [1.5, 0.7]), (1.0, [-3.0, 2.0])].into_iter().enumerate() {
        let p = MinimizeProblem {
            integrand: ok(IntegrandConfig {
                ell,
                ..Default::default()
            }
            .build(2, 2, 1.0))?,
            constraint: Constraint::AFree {
                op: div.clone(),
                mean: mean.to_vec(),
            },
            grid: coarse,
            init: Init::Random {
                seed: 900 + i as u64,
                amplitude: 0.3,
                band: 4,
            },
        };
        let m = ok(minimize(&p, &SolverOptions::default()))?;
        let w = ok(m.field.resample(512))?;
        let rep = ok(excess_scan(&w, &centers, 0.35, &opts))?;
        for c in &rep.centers {
            let rel = (c.fitted_exponent - 2.0 * opts.alpha).abs() / (2.0 * opts.alpha);
            worst = worst.max(rel);
            ensure!(rel < 0.05 && c.decay_steps.iter().all(|&b| b), "center {:?}: β̂ = {}", c.center, c.fitted_exponent);
        }
    }
    let g = ok(GridSpec::unit(2, 512))?;
    let w = ok(two_phase_field(g, &[0.0, -2.0], &[0.0, 2.0], 0, 0.8))?;
    let rep = ok(excess_scan(&w, &[vec![0.8, 0.5], vec![0.0, 0.3], vec![0.4, 0.5]], 0.35, &opts))?;
    ensure!(!rep.centers[0].regular && !rep.centers[1].regular, "interface center not flagged");
    ensure!(rep.centers[2].regular, "bulk center flagged");
    Ok(format!("β̂ within {:.2}% of 2α on 9 centers; two-phase interfaces flagged", worst * 100.0))
}

fn criterion_10() -> Check {
    let m = ok(Manifest::from_json(
        r#"[
        {"command":"rank-check","operator":"curl"},
        {"command":"potential","operator":"sym_grad","dim_n":2},
        {"command":"project","operator":"div","grid":{"points":16},"seed":3},
        {"command":"decompose","operator":"div","grid":{"points":16},"params":{"mean":[1,0,0]},"seed":4},
        {"command":"minimize","operator":"div","dim_n":2,"integrand":{"family":"perturbed","ell":1,"mu":0.1,"seed":2},
         "params":{"mean":[0.3,0.1],"init":{"kind":"random","seed":5}},"seed":5},
        {"command":"verify-poincare","operator":"curl","dim_n":2,"grid":{"points":64},"seed":6},
        {"command":"verify-korn","operator":"sym_grad","dim_n":2,"grid":{"points":64},"seed":7},
        {"command":"excess-scan","operator":"div","dim_n":2,"grid":{"points":512},"field":{"kind":"random","band":3,"amplitude":0.1},
         "params":{"radius":0.35},"seed":8},
        {"command":"harmonic-approx","operator":"curl","dim_n":2,"grid":{"points":32},"seed":9}
    ]"#,
    ))?;
    let first = ok(batch(&m, &RunOptions::default()))?;
    let mut par = m.clone();
    par.parallel = true;
    let second = ok(batch(
        &par,
        &RunOptions {
            threads: Some(3),
            ..Default::default()
        },
    ))?;
    for (a, b) in first.records.iter().zip(&second.records) {
        ensure!(a.error.is_none(), "{}: {:?}", a.name, a.error);
        ensure!(a.body_string() == b.body_string(), "{} differs between reruns", a.name);
    }
    ensure!(first.to_csv().ok() == second.to_csv().ok(), "CSV matrices differ");
    Ok(format!("{} runs, identical bodies across sequential and parallel reruns", first.total))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Option<u64>); 10] = [
        ("symbol suite", criterion_1, Some(10)),
        ("Moore-Penrose identities", criterion_2, Some(30)),
        ("exact sequence", criterion_3, None),
        ("spectral projection", criterion_4, Some(60)),
        ("quasiconvexity equality case", criterion_5, None),
        ("E-calculus", criterion_6, None),
        ("A-harmonic solver", criterion_7, None),
        ("Poincaré/Korn harness", criterion_8, None),
        ("excess decay", criterion_9, Some(300)),
        ("determinism", criterion_10, None),
    ];
    let mut failures = 0;
    for (i, (name, f, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(s)) if elapsed > Duration::from_secs(s) => {
                Err(format!("took {:.1}s, limit {s}s", elapsed.as_secs_f64()))
            }
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(e) => ("FAIL", e.as_str()),
        };
        if result.is_err() {
            failures += 1;
        }
        println!("criterion {:>2} {tag} {name} ({:.1}s): {detail}", i + 1, elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
