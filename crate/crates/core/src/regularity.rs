//! Excess energy, excess-decay scans, and measured forms of the Caccioppoli,
//! modular Poincaré–Sobolev and Korn-type inequalities.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aharmonic::local_c_star_residual;
use crate::error::{invalid, LabError, Result};
use crate::integrands::{e_of_sq, Integrand};
use crate::poly::{monomials_of_degree, multi_factorial};
use crate::polyfield::{polynomial_kernel, LocalField, PolyField};
use crate::solver::el_residual_potential;
use crate::spectral::{BallMask, GridSpec, PeriodicField};
use crate::symbol::{build_potential, DiffOperator};
use crate::util::linear_fit;

/// Radii below this many grid cells are rejected by the excess.
pub const MIN_EXCESS_CELLS: f64 = 8.0;

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn weighted_mean(values: &[Vec<f64>], mask: &BallMask) -> Vec<f64> {
    let d = values.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    for (p, v) in mask.points().iter().zip(values) {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += p.weight * x);
    }
    acc.iter().map(|a| a / mask.measure()).collect()
}

fn excess_of_values(values: &[Vec<f64>], mask: &BallMask, radius: f64, alpha: f64) -> f64 {
    let mean = weighted_mean(values, mask);
    let osc: f64 = mask
        .points()
        .iter()
        .zip(values)
        .map(|(p, v)| p.weight * e_of_sq(v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum()))
        .sum();
    radius.powf(2.0 * alpha) + osc / mask.measure()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    Ok(())
}

/// `R^{2α} + ⨏_{B_R(x₀)} E(w - (w)_{x₀,R})`; grid fields carry no singular part.
pub fn excess(w: &PeriodicField, x0: &[f64], radius: f64, alpha: f64) -> Result<f64> {
    excess_local(&LocalField::periodic(w.clone()), x0, radius, alpha)
}

/// [`excess`] for a field with a polynomial part.
pub fn excess_local(w: &LocalField, x0: &[f64], radius: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mask = BallMask::with_min_cells(*w.periodic.grid(), x0, radius, MIN_EXCESS_CELLS)?;
    Ok(excess_of_values(&w.derivatives_on(&mask, 0), &mask, radius, alpha))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub tau: f64,
    pub depth: usize,
    pub alpha: f64,
    /// Smallness threshold on `𝓔(R₀)` for the regular regime.
    pub epsilon: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            tau: 1.0 / 20.0,
            depth: 1,
            alpha: 0.3,
            epsilon: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CenterScan {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub excess: Vec<f64>,
    pub fitted_exponent: f64,
    /// `𝓔(τR) ≤ 2τ^{2α}𝓔(R)` per consecutive pair.
    pub decay_steps: Vec<bool>,
    pub small: bool,
    pub regular: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExcessReport {
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub singular_part: &'static str,
    pub centers: Vec<CenterScan>,
    pub pass: bool,
}

/// Excess at radii `R₀ τ^j`, `j = 0..=depth`, around each center.
pub fn excess_scan(w: &PeriodicField, centers: &[Vec<f64>], r0: f64, opts: &ScanOptions) -> Result<ExcessReport> {
    if !(opts.tau > 0.0 && opts.tau < 1.0 / 16.0) {
        return Err(invalid("tau must lie in (0, 1/16)"));
    }
    check_alpha(opts.alpha)?;
    if opts.depth == 0 {
        return Err(invalid("scan depth must be at least 1"));
    }
    let radii: Vec<f64> = (0..=opts.depth).map(|j| r0 * opts.tau.powi(j as i32)).collect();
    let smallest = *radii.last().expect("nonempty");
    let h = w.grid().spacing();
    if smallest < MIN_EXCESS_CELLS * h * (1.0 - 1e-12) {
        return Err(LabError::RadiusTooSmall {
            radius: smallest,
            min_cells: MIN_EXCESS_CELLS,
        });
    }
    let local = LocalField::periodic(w.clone());
    let scans: Vec<CenterScan> = centers
        .par_iter()
        .map(|c| -> Result<CenterScan> {
            let excess = radii
                .iter()
                .map(|&r| excess_local(&local, c, r, opts.alpha))
                .collect::<Result<Vec<_>>>()?;
            let factor = 2.0 * opts.tau.powf(2.0 * opts.alpha);
            let decay_steps: Vec<bool> = excess.windows(2).map(|p| p[1] <= factor * p[0]).collect();
            let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
            let ly: Vec<f64> = excess.iter().map(|e| e.ln()).collect();
            let (fitted_exponent, _) = linear_fit(&lx, &ly);
            let small = excess[0] < opts.epsilon;
            Ok(CenterScan {
                center: c.clone(),
                regular: small && decay_steps.iter().all(|&b| b),
                radii: radii.clone(),
                excess,
                fitted_exponent,
                decay_steps,
                small,
            })
        })
        .collect::<Result<_>>()?;
    let pass = scans.iter().all(|s| !s.small || s.decay_steps.iter().all(|&b| b));
    Ok(ExcessReport {
        alpha: opts.alpha,
        tau: opts.tau,
        epsilon: opts.epsilon,
        singular_part: "identically zero on grid fields",
        centers: scans,
        pass,
    })
}

/// Piecewise-constant field equal to `a` on `{x_axis < position}` (within one period) and `b` elsewhere.
pub fn two_phase_field(grid: GridSpec, a: &[f64], b: &[f64], axis: usize, position: f64) -> Result<PeriodicField> {
    if a.len() != b.len() || axis >= grid.dim_n {
        return Err(invalid("phases must share a fiber and the axis must exist"));
    }
    Ok(PeriodicField::from_fn(grid, a.len(), |x, o| {
        o.copy_from_slice(if x[axis] < position { a } else { b })
    }))
}

/// Homogeneous polynomial `a` of degree `k` with `B a ≡ w_average`, minimal coefficient norm.
pub fn fit_polynomial(w_average: &[f64], op_b: &DiffOperator) -> Result<PolyField> {
    let n = op_b.dim_n();
    let (p, q, k) = (op_b.dim_from(), op_b.dim_to(), op_b.order());
    if w_average.len() != q {
        return Err(LabError::ShapeMismatch {
            expected: q,
            got: w_average.len(),
        });
    }
    let top = monomials_of_degree(n, k);
    let nt = top.len();
    // B a = Σ_α B_α α! φ_{·,α}
    let mut t = DMatrix::zeros(q, p * nt);
    for (alpha, mat) in op_b.coeffs() {
        let b = top.iter().position(|m| m == alpha).expect("order-k multi-index");
        let f = multi_factorial(alpha);
        for i in 0..q {
            for c in 0..p {
                t[(i, c * nt + b)] += f * crate::poly::rational_to_f64(mat.get(i, c));
            }
        }
    }
    let rhs = DVector::from_column_slice(w_average);
    let phi = t
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| invalid(format!("least squares failed: {e}")))?;
    let residual = (&t * &phi - &rhs).amax();
    if residual > 1e-8 * w_average.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
        return Err(LabError::NotInImage(residual));
    }
    let mut out = PolyField::zero(n, p, k);
    let all = out.monomials();
    let m = all.len();
    let mut coeffs = out.coeffs().to_vec();
    for c in 0..p {
        for (b, e) in top.iter().enumerate() {
            let idx = all.iter().position(|x| x == e).expect("monomial");
            coeffs[c * m + idx] = phi[c * nt + b];
        }
    }
    out = PolyField::from_coeffs(n, p, k, coeffs)?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PiInfo {
    pub kind: String,
    pub degree: u32,
    pub basis_dim: usize,
    pub coefficient_norm: f64,
    /// Left side evaluated with `π = 0`.
    pub lhs_without_pi: f64,
    /// Whether subtracting `π` reduced the left side.
    pub reduces: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub parameters: BTreeMap<String, f64>,
    pub pi_info: PiInfo,
    pub cap: f64,
    pub pass: bool,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 1e-14 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn offsets(mask: &BallMask, center: &[f64]) -> Vec<Vec<f64>> {
    let g = mask.grid();
    mask.points()
        .iter()
        .map(|p| g.min_image(&g.point(p.index), center)[..g.dim_n].to_vec())
        .collect()
}

fn poly_derivatives(p: &PolyField, offs: &[Vec<f64>], j: u32) -> Vec<Vec<f64>> {
    let nb = monomials_of_degree(p.nvars(), j).len();
    offs.iter()
        .map(|y| {
            let mut o = vec![0.0; p.fiber_dim() * nb];
            p.eval_derivatives(y, j, &mut o);
            o
        })
        .collect()
}

fn sub_values(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn integral(mask: &BallMask, values: &[Vec<f64>], phi: impl Fn(&[f64]) -> f64) -> f64 {
    mask.points().iter().zip(values).map(|(p, v)| p.weight * phi(v)).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Degree of the polynomial kernel space for `π`; `order + 2` when absent.
    pub degree: Option<u32>,
    pub cap: f64,
    /// Reciprocal condition number below which the fit is declared deficient.
    pub min_rcond: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            degree: None,
            cap: 1e3,
            min_rcond: 1e-12,
        }
    }
}

/// `π` minimizing `Σ_{j<=top} ∫_{mask} |D^j(u - π)|² / R^{2(k-j)}` over the polynomial kernel.
fn project_kernel(
    u: &LocalField,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    mask: &BallMask,
    center: &[f64],
    radius: f64,
    top: u32,
    opts: &KernelOptions,
) -> Result<(PolyField, u32, usize)> {
    let n = op_b.dim_n();
    let k = op_b.order();
    let degree = opts.degree.unwrap_or(k + 2);
    let basis: Vec<PolyField> = polynomial_kernel(op_b, op_c, degree)?
        .into_iter()
        .map(|b| b.rescale(radius))
        .collect();
    let offs = offsets(mask, center);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for j in 0..=top {
        let scale = radius.powi(-((k as i32) - j as i32));
        let ud = u.derivatives_on(mask, j);
        let bd: Vec<Vec<Vec<f64>>> = basis.iter().map(|b| poly_derivatives(b, &offs, j)).collect();
        for (pi, pt) in mask.points().iter().enumerate() {
            let s = pt.weight.sqrt() * scale;
            for c in 0..ud[pi].len() {
                rows.push(bd.iter().map(|b| s * b[pi][c]).collect());
                rhs.push(s * ud[pi][c]);
            }
        }
    }
    let nb = basis.len();
    let mut pi = PolyField::zero(n, op_b.dim_from(), degree);
    if nb == 0 {
        return Ok((pi, degree, 0));
    }
    let m = DMatrix::from_fn(rows.len(), nb, |i, j| rows[i][j]);
    // column scaling so the conditioning reflects the geometry, not the basis normalization
    let norms: Vec<f64> = (0..nb).map(|j| m.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let ms = DMatrix::from_fn(m.nrows(), nb, |i, j| m[(i, j)] / norms[j]);
    let svd = ms.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < opts.min_rcond * smax {
        return Err(LabError::KernelBasisDeficient(smax / smin.max(f64::MIN_POSITIVE)));
    }
    let c = svd
        .solve(&DVector::from_vec(rhs), 0.0)
        .map_err(|e| invalid(format!("least squares failed: {e}")))?;
    for (j, b) in basis.iter().enumerate() {
        pi = pi.add(&b.scale(c[j] / norms[j]))?;
    }
    Ok((pi, degree, nb))
}

fn check_potential(u: &LocalField, op_b: &DiffOperator, op_c: Option<&DiffOperator>) -> Result<()> {
    if u.fiber_dim() != op_b.dim_from() {
        return Err(LabError::ShapeMismatch {
            expected: op_b.dim_from(),
            got: u.fiber_dim(),
        });
    }
    let res = local_c_star_residual(u, op_b, op_c)?;
    if res > 1e-8 {
        return Err(LabError::HypothesisViolated(format!("C* u residual {res:.3e}")));
    }
    Ok(())
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Measured form of the modular Poincaré–Sobolev inequality:
/// `Σ_{j<k} (∫_{B_θR} E(D^j(u-π)/R^{k-j})^q)^{1/q}` against `∫_{B_R} E(B u)`.
#[allow(clippy::too_many_arguments)]
pub fn verify_poincare_modular(
    u: &LocalField,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    x0: &[f64],
    radius: f64,
    theta: f64,
    q: f64,
    opts: &KernelOptions,
) -> Result<InequalityReport> {
    let n = op_b.dim_n() as f64;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid("theta must lie in (0, 1)"));
    }
    if !(q >= 1.0) || (n > 1.0 && q >= n / (n - 1.0)) {
        return Err(invalid("q must satisfy 1 <= q < n/(n-1)"));
    }
    let built = build_potential(op_b)?.operator;
    let op_c = op_c.or(built.as_ref());
    check_potential(u, op_b, op_c)?;
    let grid = *u.periodic.grid();
    let outer = BallMask::new(grid, x0, radius)?;
    let inner = outer.shrink(theta, 4.0)?;
    let k = op_b.order();
    let (pi, degree, nb) = project_kernel(u, op_b, op_c, &inner, x0, radius, k - 1, opts)?;
    let offs = offsets(&inner, x0);
    let modular = |with_pi: bool| -> f64 {
        (0..k)
            .map(|j| {
                let ud = u.derivatives_on(&inner, j);
                let vals = if with_pi { sub_values(&ud, &poly_derivatives(&pi, &offs, j)) } else { ud };
                let s = radius.powi(-((k - j) as i32));
                integral(&inner, &vals, |v| e_of_sq(sq(v) * s * s).powf(q)).powf(1.0 / q)
            })
            .sum()
    };
    let lhs = modular(true);
    let lhs_without_pi = modular(false);
    let bu = u.apply_on(op_b, &outer)?;
    let rhs = integral(&outer, &bu, |v| e_of_sq(sq(v)));
    let r = ratio(lhs, rhs);
    Ok(InequalityReport {
        name: "poincare_modular".into(),
        lhs,
        rhs,
        ratio: r,
        parameters: params(&[("theta", theta), ("q", q), ("R", radius)]),
        pi_info: PiInfo {
            kind: "L2 projection onto polynomial kernel of B and C*".into(),
            degree,
            basis_dim: nb,
            coefficient_norm: crate::util::norm(pi.coeffs()),
            lhs_without_pi,
            reduces: lhs <= lhs_without_pi * (1.0 + 1e-12),
        },
        cap: opts.cap,
        pass: r <= opts.cap,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct KornReport {
    #[serde(flatten)]
    pub report: InequalityReport,
    /// `Σ_{j<=k} ∫ |D^j(u-π)/R^{k-j}|² / ∫ |B u|²` with the same `π`.
    pub l2_ratio: f64,
}

/// Measured form of the Korn-type inequality
/// `Σ_{j<=k} ∫_{B_θR} |V_p(D^j(u-π)/R^{k-j})|² ≤ c ∫_{B_R} |V_p(B u)|²`.
#[allow(clippy::too_many_arguments)]
pub fn verify_korn_vp(
    u: &LocalField,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    x0: &[f64],
    radius: f64,
    theta: f64,
    p: f64,
    opts: &KernelOptions,
) -> Result<KornReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid("p must lie in (1, inf)"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid("theta must lie in (0, 1)"));
    }
    let built = build_potential(op_b)?.operator;
    let op_c = op_c.or(built.as_ref());
    check_potential(u, op_b, op_c)?;
    let grid = *u.periodic.grid();
    let outer = BallMask::new(grid, x0, radius)?;
    let inner = outer.shrink(theta, 4.0)?;
    let k = op_b.order();
    let (pi, degree, nb) = project_kernel(u, op_b, op_c, &inner, x0, radius, k, opts)?;
    let offs = offsets(&inner, x0);
    let vp = |s2: f64| crate::integrands::vp_sq_of_sq(s2, p);
    let sums = |with_pi: bool| -> (f64, f64) {
        (0..=k)
            .map(|j| {
                let ud = u.derivatives_on(&inner, j);
                let vals = if with_pi { sub_values(&ud, &poly_derivatives(&pi, &offs, j)) } else { ud };
                let s = radius.powi(-((k - j) as i32));
                (
                    integral(&inner, &vals, |v| vp(sq(v) * s * s)),
                    integral(&inner, &vals, |v| sq(v) * s * s),
                )
            })
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    };
    let (lhs, l2_lhs) = sums(true);
    let (lhs_without_pi, _) = sums(false);
    let bu = u.apply_on(op_b, &outer)?;
    let rhs = integral(&outer, &bu, |v| vp(sq(v)));
    let l2_rhs = integral(&outer, &bu, sq);
    let r = ratio(lhs, rhs);
    Ok(KornReport {
        report: InequalityReport {
            name: "korn_vp".into(),
            lhs,
            rhs,
            ratio: r,
            parameters: params(&[("theta", theta), ("p", p), ("R", radius)]),
            pi_info: PiInfo {
                kind: "L2 projection onto polynomial kernel of B and C*".into(),
                degree,
                basis_dim: nb,
                coefficient_norm: crate::util::norm(pi.coeffs()),
                lhs_without_pi,
                reduces: lhs <= lhs_without_pi * (1.0 + 1e-12),
            },
            cap: opts.cap,
            pass: r <= opts.cap,
        },
        l2_ratio: ratio(l2_lhs, l2_rhs),
    })
}

/// `a = a_top + lower`: `B a_top = (B u)_{x₀,R}` and the lower-order part makes the
/// averages of `D^i(u - a)` over `B_R(x₀)` vanish for `i < k`. Coordinates are `x - x₀`.
pub fn matched_polynomial(u: &LocalField, op_b: &DiffOperator, x0: &[f64], radius: f64) -> Result<PolyField> {
    let grid = *u.periodic.grid();
    let mask = BallMask::new(grid, x0, radius)?;
    let k = op_b.order();
    let n = op_b.dim_n();
    let p = op_b.dim_from();
    let avg_b = weighted_mean(&u.apply_on(op_b, &mask)?, &mask);
    let mut a = fit_polynomial(&avg_b, op_b)?;
    let offs = offsets(&mask, x0);
    for i in (0..k).rev() {
        let diff = sub_values(&u.derivatives_on(&mask, i), &poly_derivatives(&a, &offs, i));
        let avg = weighted_mean(&diff, &mask);
        let monos = monomials_of_degree(n, i);
        let nb = monos.len();
        let mut part = PolyField::zero(n, p, i);
        let all = part.monomials();
        let m = all.len();
        let mut coeffs = part.coeffs().to_vec();
        for c in 0..p {
            for (b, e) in monos.iter().enumerate() {
                let idx = all.iter().position(|x| x == e).expect("monomial");
                coeffs[c * m + idx] = avg[c * nb + b] / multi_factorial(e);
            }
        }
        part = PolyField::from_coeffs(n, p, i, coeffs)?;
        a = a.add(&part)?;
    }
    Ok(a)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaccioppoliOptions {
    pub cap: f64,
    pub max_el_residual: f64,
}

impl Default for CaccioppoliOptions {
    fn default() -> Self {
        Self {
            cap: 1e3,
            max_el_residual: 1e-4,
        }
    }
}

/// Measured Caccioppoli inequality with unit constants:
/// `∫_{B_{R/2}} E(B(u-a))` against
/// `Σ_{i<k} ∫_{B_R} E(D^i(u-a)/R^{k-i}) + R Σ_{i<k} ∫_{B_R} |D^i(u-a)|/R^{k-i} + R ∫_{B_R} |B(u-a)|`.
///
/// `a` is given in coordinates `x - x₀`; [`matched_polynomial`] is used when absent.
#[allow(clippy::too_many_arguments)]
pub fn verify_caccioppoli(
    u: &LocalField,
    f: &Integrand,
    op_b: &DiffOperator,
    x0: &[f64],
    radius: f64,
    a: Option<&PolyField>,
    opts: &CaccioppoliOptions,
) -> Result<InequalityReport> {
    let v = u.apply_grid(op_b)?;
    let el = el_residual_potential(f, &v, op_b)?;
    if el > opts.max_el_residual {
        return Err(LabError::NotExtremal(el));
    }
    let a = match a {
        Some(a) => a.clone(),
        None => matched_polynomial(u, op_b, x0, radius)?,
    };
    let grid = *u.periodic.grid();
    let outer = BallMask::new(grid, x0, radius)?;
    let inner = outer.shrink(0.5, 4.0)?;
    let k = op_b.order();
    let b_minus = |mask: &BallMask| -> Result<Vec<Vec<f64>>> {
        let offs = offsets(mask, x0);
        let ba = a.apply(op_b)?;
        Ok(sub_values(&u.apply_on(op_b, mask)?, &poly_derivatives(&ba, &offs, 0)))
    };
    let lhs = integral(&inner, &b_minus(&inner)?, |v| e_of_sq(sq(v)));
    let offs = offsets(&outer, x0);
    let mut modular = 0.0;
    let mut linear = 0.0;
    for i in 0..k {
        let d = sub_values(&u.derivatives_on(&outer, i), &poly_derivatives(&a, &offs, i));
        let s = radius.powi(-((k - i) as i32));
        modular += integral(&outer, &d, |v| e_of_sq(sq(v) * s * s));
        linear += radius * integral(&outer, &d, |v| sq(v).sqrt() * s);
    }
    let top = radius * integral(&outer, &b_minus(&outer)?, |v| sq(v).sqrt());
    let rhs = modular + linear + top;
    let r = ratio(lhs, rhs);
    Ok(InequalityReport {
        name: "caccioppoli".into(),
        lhs,
        rhs,
        ratio: r,
        parameters: params(&[("R", radius), ("el_residual", el)]),
        pi_info: PiInfo {
            kind: "polynomial a with B a equal to the ball average of B u".into(),
            degree: a.degree(),
            basis_dim: 0,
            coefficient_norm: crate::util::norm(a.coeffs()),
            lhs_without_pi: lhs,
            reduces: true,
        },
        cap: opts.cap,
        pass: r <= opts.cap,
    })
}
