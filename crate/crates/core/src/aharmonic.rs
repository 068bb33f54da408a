//! Constant-coefficient `A`-harmonic systems on the torus and the harmonic
//! approximation experiment.
//!
//! The periodic solver treats the forced problem
//! `∫ A[B v, B φ] = -∫ ⟨F, B φ⟩` for all periodic `φ`, with `C* v = 0`.
//! For `A = Id` and `F = B h₀` this is the homogeneous problem for `h₀ + v`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::integrands::eval_e;
use crate::polyfield::{numerical_nullspace, operator_matrix_f64, LocalField, PolyField};
use crate::spectral::{
    apply_multiplier, c_star_residual, mat_vec, rank_of, BallMask, GridSpec, PeriodicField,
    SpectralOperator,
};
use crate::symbol::{build_potential, decell_parts, is_potential_pair, sample_directions, DiffOperator};
use crate::util::{linear_fit, rng, sub_seed, unit_vec};

const ELLIPTICITY_DIRS: usize = 100;

/// A symmetric bilinear form on `V` with its ellipticity bounds on `∪_ξ im B(ξ)`.
#[derive(Clone, Debug, Serialize)]
pub struct BilinearFormA {
    matrix: Vec<f64>,
    dim: usize,
    pub lambda: f64,
    pub big_lambda: f64,
}

fn range_bases(op_b: &DiffOperator) -> Vec<DMatrix<f64>> {
    let symbol = op_b.symbol().compile();
    sample_directions(op_b.dim_n(), ELLIPTICITY_DIRS, 0xa4a)
        .iter()
        .map(|d| {
            let m = symbol.eval(&d.xi);
            let svd = m.clone().svd(true, false);
            let u = svd.u.expect("requested U");
            let smax = svd.singular_values.max();
            let cols: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > 1e-9 * smax)
                .collect();
            DMatrix::from_fn(m.nrows(), cols.len(), |i, j| u[(i, cols[j])])
        })
        .collect()
}

impl BilinearFormA {
    /// Checks symmetry and measures `λ`, `Λ` as the extreme eigenvalues of
    /// `Kᵀ A K` over orthonormal bases `K` of `im B(ξ)` at sampled directions.
    pub fn new(matrix: Vec<f64>, op_b: &DiffOperator) -> Result<Self> {
        let q = op_b.dim_to();
        if matrix.len() != q * q {
            return Err(LabError::ShapeMismatch {
                expected: q * q,
                got: matrix.len(),
            });
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..q {
            for j in 0..i {
                if (matrix[i * q + j] - matrix[j * q + i]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(invalid("bilinear form must be symmetric"));
                }
            }
        }
        let a = DMatrix::from_row_slice(q, q, &matrix);
        let (mut lambda, mut big_lambda) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in range_bases(op_b) {
            if k.ncols() == 0 {
                continue;
            }
            let red = k.transpose() * &a * &k;
            let eig = SymmetricEigen::new(red).eigenvalues;
            lambda = lambda.min(eig.min());
            big_lambda = big_lambda.max(eig.max());
        }
        if !(lambda > 0.0) {
            return Err(LabError::HypothesisViolated(format!(
                "bilinear form is not elliptic on the wave cone (lambda = {lambda:.3e})"
            )));
        }
        Ok(Self {
            matrix,
            dim: q,
            lambda,
            big_lambda,
        })
    }

    pub fn identity(op_b: &DiffOperator) -> Result<Self> {
        let q = op_b.dim_to();
        let mut m = vec![0.0; q * q];
        (0..q).for_each(|i| m[i * q + i] = 1.0);
        Self::new(m, op_b)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let q = self.dim;
        (0..q)
            .map(|i| a[i] * (0..q).map(|j| self.matrix[i * q + j] * b[j]).sum::<f64>())
            .sum()
    }

    pub fn apply_vec(&self, v: &[f64], out: &mut [f64]) {
        let q = self.dim;
        for i in 0..q {
            out[i] = (0..q).map(|j| self.matrix[i * q + j] * v[j]).sum();
        }
    }

    pub fn apply_field(&self, f: &PeriodicField) -> PeriodicField {
        f.map(self.dim, |v, o| self.apply_vec(v, o))
    }

    /// Applies the form to the fiber of a polynomial field coefficient-wise.
    pub fn apply_poly(&self, p: &PolyField) -> PolyField {
        let q = self.dim;
        let m = p.coeffs().len() / q;
        let c = p.coeffs();
        let mut out = vec![0.0; c.len()];
        for i in 0..q {
            for j in 0..q {
                let a = self.matrix[i * q + j];
                for b in 0..m {
                    out[i * m + b] += a * c[j * m + b];
                }
            }
        }
        PolyField::from_coeffs(p.nvars(), q, p.degree(), out).expect("same shape")
    }

    /// `A + eps ΔA`, re-checked for ellipticity.
    pub fn perturbed(&self, eps: f64, delta: &[f64], op_b: &DiffOperator) -> Result<Self> {
        if delta.len() != self.matrix.len() {
            return Err(LabError::ShapeMismatch {
                expected: self.matrix.len(),
                got: delta.len(),
            });
        }
        let m = self.matrix.iter().zip(delta).map(|(a, d)| a + eps * d).collect();
        Self::new(m, op_b)
    }

    /// Operator norm of `self - other`.
    pub fn distance(&self, other: &Self) -> f64 {
        let q = self.dim;
        let d = DMatrix::from_fn(q, q, |i, j| self.matrix[i * q + j] - other.matrix[i * q + j]);
        SymmetricEigen::new(d).eigenvalues.amax()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AHarmonicSolution {
    pub field: PeriodicField,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Frequency-wise `B†(ξ) B†(ξ)ᵀ`, the pseudoinverse of `Bᵀ(ξ) B(ξ)` on `im Bᵀ(ξ)`.
struct Preconditioner {
    pinv: crate::symbol::CompiledRational,
    dim_n: usize,
    p: usize,
    q: usize,
}

impl Preconditioner {
    fn new(op_b: &DiffOperator) -> Result<Self> {
        let parts = decell_parts(op_b, rank_of(op_b)?)?;
        Ok(Self {
            pinv: parts.pseudoinverse().compile(),
            dim_n: op_b.dim_n(),
            p: op_b.dim_from(),
            q: op_b.dim_to(),
        })
    }

    fn apply(&self, r: &PeriodicField) -> PeriodicField {
        let (p, q) = (self.p, self.q);
        apply_multiplier(r, p, |fr, i, o| {
            if fr.is_zero || fr.degenerate {
                o.iter_mut().for_each(|c| *c = Complex64::default());
                return;
            }
            let mut m = vec![0.0; p * q];
            self.pinv.eval_into(&fr.discrete[..self.dim_n], &mut m);
            // t = B†ᵀ i, then o = B† t
            let mut t = vec![Complex64::default(); q];
            for (a, ta) in t.iter_mut().enumerate() {
                for (c, ic) in i.iter().enumerate() {
                    *ta += *ic * m[c * q + a];
                }
            }
            mat_vec(&m, q, &t, o, Complex64::new(1.0, 0.0));
        })
    }
}

fn check_shapes(form: &BilinearFormA, op_b: &DiffOperator, datum: &PeriodicField) -> Result<()> {
    if form.dim() != op_b.dim_to() {
        return Err(LabError::ShapeMismatch {
            expected: op_b.dim_to(),
            got: form.dim(),
        });
    }
    if datum.fiber_dim() != op_b.dim_to() {
        return Err(LabError::ShapeMismatch {
            expected: op_b.dim_to(),
            got: datum.fiber_dim(),
        });
    }
    if datum.grid().dim_n != op_b.dim_n() {
        return Err(invalid("grid and operator dimensions differ"));
    }
    Ok(())
}

/// Solves `B*(A B v) = -B* F` with `C* v = 0` and zero mean by preconditioned CG.
///
/// `op_c`, when given, must be a potential of `op_b`; iterates stay in `im B*(ξ)`,
/// which is `ker C*(ξ)`, so the constraint holds by construction.
pub fn solve_a_harmonic(
    form: &BilinearFormA,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    datum: &PeriodicField,
    opts: &CgOptions,
) -> Result<AHarmonicSolution> {
    check_shapes(form, op_b, datum)?;
    if let Some(c) = op_c {
        if !is_potential_pair(op_b, c)? {
            return Err(invalid("op_c is not a potential of op_b"));
        }
    }
    let sop = SpectralOperator::new(op_b);
    let pre = Preconditioner::new(op_b)?;
    let normal = |v: &PeriodicField| -> Result<PeriodicField> {
        sop.apply_adjoint(&form.apply_field(&sop.apply(v)?))
    };
    let b = sop.apply_adjoint(datum)?.scale(-1.0);
    let b_norm = b.l2_norm();
    let mut x = PeriodicField::zeros(*datum.grid(), op_b.dim_from());
    if b_norm == 0.0 {
        return Ok(AHarmonicSolution {
            field: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b;
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = r.inner(&z);
    let mut rel = 1.0;
    for it in 1..=opts.max_iter {
        let ap = normal(&p)?;
        let pap = p.inner(&ap);
        if !(pap > 0.0) {
            return Err(LabError::IllConditioned {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        x = x.axpy(alpha, &p);
        r = r.axpy(-alpha, &ap);
        rel = r.l2_norm() / b_norm;
        if rel < opts.tol {
            return Ok(AHarmonicSolution {
                field: x,
                iterations: it,
                relative_residual: rel,
            });
        }
        z = pre.apply(&r);
        let rz_next = r.inner(&z);
        p = z.axpy(rz_next / rz, &p);
        rz = rz_next;
    }
    Err(LabError::IllConditioned {
        iterations: opts.max_iter,
        residual: rel,
    })
}

/// `max_φ |∫ A[B v, B φ] + ∫ ⟨F, B φ⟩| / ‖B φ‖₂` over seeded random band-limited `φ`.
pub fn galerkin_residual(
    form: &BilinearFormA,
    op_b: &DiffOperator,
    v: &PeriodicField,
    datum: &PeriodicField,
    n_tests: usize,
    seed: u64,
) -> Result<f64> {
    check_shapes(form, op_b, datum)?;
    let sop = SpectralOperator::new(op_b);
    let abv = form.apply_field(&sop.apply(v)?);
    let mut worst = 0.0f64;
    for t in 0..n_tests {
        let phi = PeriodicField::random_band_limited(*v.grid(), op_b.dim_from(), 6, sub_seed(seed, t as u64));
        let bphi = sop.apply(&phi)?;
        let den = bphi.l2_norm();
        if den < 1e-14 {
            continue;
        }
        worst = worst.max((abv.inner(&bphi) + datum.inner(&bphi)).abs() / den);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    pub eps: Vec<f64>,
    pub form_distance: Vec<f64>,
    pub difference: Vec<f64>,
    /// `‖B(ṽ - v)‖₂ / (|Ã - A| ‖B v‖₂)` per `eps`.
    pub constants: Vec<f64>,
    pub slope: f64,
    pub b_norm: f64,
}

/// Compares solutions for `A` and `A + eps ΔA` over an `eps` ladder.
pub fn perturbation_study(
    form: &BilinearFormA,
    delta: &[f64],
    eps: &[f64],
    op_b: &DiffOperator,
    datum: &PeriodicField,
    opts: &CgOptions,
) -> Result<PerturbationReport> {
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("need at least two positive perturbation sizes"));
    }
    let sop = SpectralOperator::new(op_b);
    let v = solve_a_harmonic(form, op_b, None, datum, opts)?.field;
    let bv = sop.apply(&v)?;
    let b_norm = bv.l2_norm();
    let mut form_distance = Vec::new();
    let mut difference = Vec::new();
    let mut constants = Vec::new();
    for &e in eps {
        let pert = form.perturbed(e, delta, op_b)?;
        let w = solve_a_harmonic(&pert, op_b, None, datum, opts)?.field;
        let diff = sop.apply(&w)?.sub(&bv).l2_norm();
        let dist = pert.distance(form);
        form_distance.push(dist);
        difference.push(diff);
        constants.push(diff / (dist * b_norm));
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = difference.iter().map(|d| d.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    Ok(PerturbationReport {
        eps: eps.to_vec(),
        form_distance,
        difference,
        constants,
        slope,
        b_norm,
    })
}

/// Polynomial fields `h` of degree `<= degree` with `B*(A B h) = 0` and `C* h = 0`,
/// as an orthonormal coefficient basis.
pub fn a_harmonic_polynomials(
    form: &BilinearFormA,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    degree: u32,
) -> Result<Vec<PolyField>> {
    let n = op_b.dim_n();
    let (p, q, k) = (op_b.dim_from(), op_b.dim_to(), op_b.order());
    let bmat = operator_matrix_f64(op_b, false, degree);
    let ncols = bmat.ncols();
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    if degree >= 2 * k {
        let m1 = bmat.nrows() / q;
        let mut amat = DMatrix::zeros(q * m1, q * m1);
        for i in 0..q {
            for j in 0..q {
                let a = form.matrix()[i * q + j];
                for b in 0..m1 {
                    amat[(i * m1 + b, j * m1 + b)] = a;
                }
            }
        }
        let bstar = operator_matrix_f64(op_b, true, degree - k);
        blocks.push(bstar * amat * &bmat);
    }
    if let Some(c) = op_c {
        if c.dim_to() != p {
            return Err(invalid("potential operator does not match B"));
        }
        if degree >= c.order() {
            blocks.push(operator_matrix_f64(c, true, degree));
        }
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(rows, ncols);
    let mut at = 0;
    for b in &blocks {
        m.view_mut((at, 0), (b.nrows(), ncols)).copy_from(b);
        at += b.nrows();
    }
    numerical_nullspace(&m, 1e-10)
        .into_iter()
        .map(|v| PolyField::from_coeffs(n, p, degree, v.iter().cloned().collect()))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxOptions {
    /// Degree of the polynomial `A`-harmonic space; `order + 2` when absent.
    pub degree: Option<u32>,
    pub k_bound: f64,
    pub seed: u64,
    /// Oscillation counts of the test-field bank, per radius.
    pub scales: Vec<f64>,
    pub directions: usize,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        Self {
            degree: None,
            k_bound: 10.0,
            seed: 7,
            scales: vec![1.0, 2.0, 4.0],
            directions: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HarmonicApproxReport {
    pub gamma: f64,
    pub delta: f64,
    pub modular_distance: f64,
    pub h_energy: f64,
    #[serde(rename = "K_bound")]
    pub k_bound: f64,
    pub within_bound: bool,
    /// `⨏_{B_r} E(B w)`; the hypothesis asks for at most `γ²`.
    pub w_energy: f64,
    pub energy_hypothesis: bool,
    pub c_star_residual: f64,
    pub degree: u32,
    pub basis_dim: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub seeds: Vec<u64>,
    pub grid: GridSpec,
    #[serde(skip)]
    pub h: PolyField,
}

fn offsets(mask: &BallMask, center: &[f64]) -> Vec<Vec<f64>> {
    let g = mask.grid();
    mask.points()
        .iter()
        .map(|p| g.min_image(&g.point(p.index), center)[..g.dim_n].to_vec())
        .collect()
}

fn e_mean(values: &[Vec<f64>], mask: &BallMask, scale: f64) -> f64 {
    let s: f64 = mask
        .points()
        .iter()
        .zip(values)
        .map(|(p, v)| {
            let z: Vec<f64> = v.iter().map(|x| x * scale).collect();
            p.weight * eval_e(&z)
        })
        .sum();
    s / mask.measure()
}

/// `C*`-residual of a local field: spectral part plus the polynomial coefficients.
pub fn local_c_star_residual(w: &LocalField, op_b: &DiffOperator, op_c: Option<&DiffOperator>) -> Result<f64> {
    let mut res = c_star_residual(op_b, &w.periodic)?;
    if let Some(poly) = &w.poly {
        let built;
        let c = match op_c {
            Some(c) => Some(c),
            None => {
                built = build_potential(op_b)?.operator;
                built.as_ref()
            }
        };
        if let Some(c) = c {
            res = res.max(poly.apply_adjoint(c)?.max_coeff());
        }
    }
    Ok(res)
}

/// Scale `s` with `⨏_{mask} E(s B w) = target`.
pub fn scale_to_energy(w: &LocalField, op_b: &DiffOperator, mask: &BallMask, target: f64) -> Result<f64> {
    let bw = w.apply_on(op_b, mask)?;
    let base = e_mean(&bw, mask, 1.0);
    if base == 0.0 || !(target > 0.0) {
        return Err(invalid("cannot normalize a field with zero energy"));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while e_mean(&bw, mask, hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if e_mean(&bw, mask, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn bump(y: &[f64], half: f64) -> f64 {
    y.iter()
        .map(|&t| {
            if t.abs() >= half {
                0.0
            } else {
                (std::f64::consts::PI * (t + half) / (2.0 * half)).sin().powi(4)
            }
        })
        .product()
}

/// Fits a polynomial `A`-harmonic `γh` to `w` on `B_{r/2}(x₀)` and measures the
/// almost-harmonicity defect of `w` on `B_r(x₀)` against a fixed test-field bank.
pub fn harmonic_approx_experiment(
    w: &LocalField,
    form: &BilinearFormA,
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    center: &[f64],
    radius: f64,
    gamma: f64,
    opts: &ApproxOptions,
) -> Result<HarmonicApproxReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma must lie in (0, 1]"));
    }
    if w.fiber_dim() != op_b.dim_from() || form.dim() != op_b.dim_to() {
        return Err(LabError::ShapeMismatch {
            expected: op_b.dim_from(),
            got: w.fiber_dim(),
        });
    }
    let built = build_potential(op_b)?.operator;
    let op_c = op_c.or(built.as_ref());
    let c_res = local_c_star_residual(w, op_b, op_c)?;
    if c_res > 1e-8 {
        return Err(LabError::HypothesisViolated(format!("C* w residual {c_res:.3e}")));
    }
    let grid = *w.periodic.grid();
    let n = grid.dim_n;
    let k = op_b.order();
    let mask = BallMask::new(grid, center, radius)?;
    let half = mask.shrink(0.5, 4.0)?;
    let w_energy = e_mean(&w.apply_on(op_b, &mask)?, &mask, 1.0);

    let degree = opts.degree.unwrap_or(k + 2);
    let basis: Vec<PolyField> = a_harmonic_polynomials(form, op_b, op_c, degree)?
        .into_iter()
        .map(|h| h.rescale(radius))
        .collect();

    // weighted least squares on the half ball
    let offs = offsets(&half, center);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut target: Vec<f64> = Vec::new();
    let mut push_block = |wvals: Vec<Vec<f64>>, eval: &dyn Fn(&PolyField, &[f64], &mut Vec<f64>), scale: f64| {
        for ((pt, y), wv) in half.points().iter().zip(&offs).zip(&wvals) {
            let s = pt.weight.sqrt() * scale;
            let cols: Vec<Vec<f64>> = basis
                .iter()
                .map(|h| {
                    let mut out = Vec::new();
                    eval(h, y, &mut out);
                    out
                })
                .collect();
            for (c, wc) in wv.iter().enumerate() {
                rows.push(cols.iter().map(|col| s * col[c]).collect());
                target.push(s * wc);
            }
        }
    };
    for i in 0..k {
        let scale = radius.powi(-((k - i) as i32));
        let wd = w.derivatives_on(&half, i);
        let eval = move |h: &PolyField, y: &[f64], out: &mut Vec<f64>| {
            let nb = crate::poly::monomials_of_degree(h.nvars(), i).len();
            out.resize(h.fiber_dim() * nb, 0.0);
            h.eval_derivatives(y, i, out);
        };
        push_block(wd, &eval, scale);
    }
    let bbasis: Vec<PolyField> = basis.iter().map(|h| h.apply(op_b)).collect::<Result<_>>()?;
    let bw_half = w.apply_on(op_b, &half)?;
    {
        for ((pt, y), wv) in half.points().iter().zip(&offs).zip(&bw_half) {
            let s = pt.weight.sqrt();
            let cols: Vec<Vec<f64>> = bbasis
                .iter()
                .map(|h| {
                    let mut out = vec![0.0; h.fiber_dim()];
                    h.eval(y, &mut out);
                    out
                })
                .collect();
            for (c, wc) in wv.iter().enumerate() {
                rows.push(cols.iter().map(|col| s * col[c]).collect());
                target.push(s * wc);
            }
        }
    }
    let nb = basis.len();
    let coef = if nb == 0 {
        DVector::zeros(0)
    } else {
        let m = DMatrix::from_fn(rows.len(), nb, |i, j| rows[i][j]);
        let rhs = DVector::from_vec(target);
        m.svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| invalid(format!("least squares failed: {e}")))?
    };
    let mut fitted = PolyField::zero(n, op_b.dim_from(), degree);
    for (h, c) in basis.iter().zip(coef.iter()) {
        fitted = fitted.add(&h.scale(*c))?;
    }

    // modular distance Σ_{i<k} ⨏ E(D^i(w - γh) / r^{k-i}) on the half ball
    let mut modular_distance = 0.0;
    for i in 0..k {
        let nb_i = crate::poly::monomials_of_degree(n, i).len();
        let wd = w.derivatives_on(&half, i);
        let diffs: Vec<Vec<f64>> = wd
            .iter()
            .zip(&offs)
            .map(|(v, y)| {
                let mut hv = vec![0.0; fitted.fiber_dim() * nb_i];
                fitted.eval_derivatives(y, i, &mut hv);
                v.iter().zip(&hv).map(|(a, b)| a - b).collect()
            })
            .collect();
        modular_distance += e_mean(&diffs, &half, radius.powi(-((k - i) as i32)));
    }
    let bfit = fitted.apply(op_b)?;
    let bh: Vec<Vec<f64>> = offs
        .iter()
        .map(|y| {
            let mut o = vec![0.0; op_b.dim_to()];
            bfit.eval(y, &mut o);
            o
        })
        .collect();
    let h_energy = e_mean(&bh, &half, 1.0 / gamma);

    let delta = almost_harmonic_defect(w, form, op_b, &mask, center, radius, gamma, opts)?;
    Ok(HarmonicApproxReport {
        gamma,
        delta,
        modular_distance,
        h_energy,
        k_bound: opts.k_bound,
        within_bound: h_energy <= opts.k_bound,
        w_energy,
        energy_hypothesis: w_energy <= gamma * gamma,
        c_star_residual: c_res,
        degree,
        basis_dim: nb,
        center: center.to_vec(),
        radius,
        seeds: vec![opts.seed],
        grid,
        h: fitted.scale(1.0 / gamma),
    })
}

/// `max_φ |⨏_{B_r} A[B w, B φ]| / (γ sup |B φ|)` over the seeded bump bank, evaluated
/// as `∫ ⟨B*(A B w), φ⟩` since every `φ` is supported in the ball.
#[allow(clippy::too_many_arguments)]
fn almost_harmonic_defect(
    w: &LocalField,
    form: &BilinearFormA,
    op_b: &DiffOperator,
    mask: &BallMask,
    center: &[f64],
    radius: f64,
    gamma: f64,
    opts: &ApproxOptions,
) -> Result<f64> {
    let grid = *mask.grid();
    let n = grid.dim_n;
    let p = op_b.dim_from();
    let sop = SpectralOperator::new(op_b);
    let nper = sop.apply_adjoint(&form.apply_field(&sop.apply(&w.periodic)?))?;
    let npoly = match &w.poly {
        Some(poly) => Some(form.apply_poly(&poly.apply(op_b)?).apply_adjoint(op_b)?),
        None => None,
    };
    let offs = offsets(mask, center);
    let nw: Vec<Vec<f64>> = mask
        .points()
        .iter()
        .map(|pt| {
            let mut v = nper.at(pt.index).to_vec();
            if let Some(np) = &npoly {
                let yw = grid.min_image(&grid.point(pt.index), &w.origin);
                let mut extra = vec![0.0; p];
                np.eval(&yw[..n], &mut extra);
                v.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
            }
            v
        })
        .collect();
    let half_side = radius / (n as f64).sqrt();
    let mut r = rng(opts.seed);
    let mut worst = 0.0f64;
    for &s in &opts.scales {
        for _ in 0..opts.directions {
            let dir = unit_vec(&mut r, n);
            let e = unit_vec(&mut r, p);
            let phi_at = |y: &[f64]| -> f64 {
                let b = bump(y, half_side);
                if b == 0.0 {
                    return 0.0;
                }
                let t: f64 = dir.iter().zip(y).map(|(a, b)| a * b).sum();
                b * (2.0 * std::f64::consts::PI * s * t / radius).sin()
            };
            let phi = PeriodicField::from_fn(grid, p, |x, o| {
                let y = grid.min_image(x, center);
                let v = phi_at(&y[..n]);
                o.iter_mut().zip(&e).for_each(|(a, b)| *a = v * b);
            });
            let sup_b = sop.apply(&phi)?.sup_norm();
            if sup_b < 1e-14 {
                continue;
            }
            let integral: f64 = mask
                .points()
                .iter()
                .zip(&offs)
                .zip(&nw)
                .map(|((_, y), v)| {
                    let ph = phi_at(y);
                    ph * v.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum::<f64>()
                * grid.cell_volume();
            worst = worst.max(integral.abs() / mask.measure() / (gamma * sup_b));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_form_bounds() {
        let g = DiffOperator::gradient(2).unwrap();
        let a = BilinearFormA::identity(&g).unwrap();
        assert!((a.lambda - 1.0).abs() < 1e-12 && (a.big_lambda - 1.0).abs() < 1e-12);
        assert_eq!(a.eval(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }

    #[test]
    fn non_elliptic_form_rejected() {
        let g = DiffOperator::gradient(2).unwrap();
        assert!(BilinearFormA::new(vec![1.0, 0.0, 0.0, -1.0], &g).is_err());
        assert!(BilinearFormA::new(vec![1.0, 0.5, 0.0, 1.0], &g).is_err());
    }

    #[test]
    fn harmonic_polynomials_for_gradient() {
        // harmonic polynomials of degree <= 3 in the plane: 1 + 2 + 2 + 2
        let g = DiffOperator::gradient(2).unwrap();
        let a = BilinearFormA::identity(&g).unwrap();
        let hs = a_harmonic_polynomials(&a, &g, None, 3).unwrap();
        assert_eq!(hs.len(), 7);
        let lap = DiffOperator::laplacian(2).unwrap();
        for h in hs {
            assert!(h.apply(&lap).unwrap().max_coeff() < 1e-12);
        }
    }
}
