//! Vector-valued polynomials in local coordinates `y = x - x0`, the operators
//! acting on them, and their exact kernel spaces.

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{invalid, LabError, Result};
use crate::poly::{monomials_of_degree, monomials_up_to, rational_to_f64, Rational};
use crate::spectral::{apply_operator, derivatives, BallMask, PeriodicField};
use crate::symbol::DiffOperator;

/// `Σ_c Σ_β coeffs[c·m + β] y^β e_c` with `β` running over monomials of degree `<= degree`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolyField {
    nvars: usize,
    fiber: usize,
    degree: u32,
    coeffs: Vec<f64>,
}

fn falling(b: u32, a: u32) -> f64 {
    (b - a + 1..=b).map(f64::from).product()
}

fn monomial_index(monos: &[Vec<u32>]) -> impl Fn(&[u32]) -> usize + '_ {
    move |e: &[u32]| monos.iter().position(|m| m == e).expect("monomial in basis")
}

impl PolyField {
    pub fn zero(nvars: usize, fiber: usize, degree: u32) -> Self {
        let m = monomials_up_to(nvars, degree).len();
        Self {
            nvars,
            fiber,
            degree,
            coeffs: vec![0.0; fiber * m],
        }
    }

    pub fn from_coeffs(nvars: usize, fiber: usize, degree: u32, coeffs: Vec<f64>) -> Result<Self> {
        let m = monomials_up_to(nvars, degree).len();
        if coeffs.len() != fiber * m {
            return Err(LabError::ShapeMismatch {
                expected: fiber * m,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            nvars,
            fiber,
            degree,
            coeffs,
        })
    }

    /// Constant polynomial.
    pub fn constant(nvars: usize, c: &[f64]) -> Self {
        Self {
            nvars,
            fiber: c.len(),
            degree: 0,
            coeffs: c.to_vec(),
        }
    }

    /// Linear field `y ↦ G y` for a `fiber × nvars` row-major matrix `G`.
    pub fn linear(nvars: usize, g: &[f64]) -> Self {
        let fiber = g.len() / nvars;
        let mut p = Self::zero(nvars, fiber, 1);
        let monos = monomials_up_to(nvars, 1);
        let idx = monomial_index(&monos);
        let m = monos.len();
        for c in 0..fiber {
            for a in 0..nvars {
                let mut e = vec![0; nvars];
                e[a] = 1;
                p.coeffs[c * m + idx(&e)] = g[c * nvars + a];
            }
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn monomials(&self) -> Vec<Vec<u32>> {
        monomials_up_to(self.nvars, self.degree)
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.coeffs.iter_mut().for_each(|c| *c *= s);
        p
    }

    /// Same polynomial represented with a larger degree bound.
    pub fn raise(&self, degree: u32) -> Self {
        if degree <= self.degree {
            return self.clone();
        }
        let from = self.monomials();
        let to = monomials_up_to(self.nvars, degree);
        let idx = monomial_index(&to);
        let mut p = Self::zero(self.nvars, self.fiber, degree);
        for c in 0..self.fiber {
            for (b, e) in from.iter().enumerate() {
                p.coeffs[c * to.len() + idx(e)] = self.coeffs[c * from.len() + b];
            }
        }
        p
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.nvars != other.nvars || self.fiber != other.fiber {
            return Err(invalid("polynomial fields of different shape"));
        }
        let d = self.degree.max(other.degree);
        let (a, b) = (self.raise(d), other.raise(d));
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect();
        Ok(Self { coeffs, ..a })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.eval_derivatives(y, 0, out);
    }

    /// `∂^α p(y)` for all `|α| = j`, laid out fiber-slow like [`derivatives`].
    pub fn eval_derivatives(&self, y: &[f64], j: u32, out: &mut [f64]) {
        let monos = self.monomials();
        let alphas = monomials_of_degree(self.nvars, j);
        let (m, na) = (monos.len(), alphas.len());
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, alpha) in alphas.iter().enumerate() {
            for (b, beta) in monos.iter().enumerate() {
                if beta.iter().zip(alpha).any(|(bb, aa)| bb < aa) {
                    continue;
                }
                let mut w = 1.0;
                for v in 0..self.nvars {
                    w *= falling(beta[v], alpha[v]) * y[v].powi((beta[v] - alpha[v]) as i32);
                }
                for c in 0..self.fiber {
                    out[c * na + a] += self.coeffs[c * m + b] * w;
                }
            }
        }
    }

    /// `op p`, again a polynomial field (of degree `degree - order`, at least 0).
    pub fn apply(&self, op: &DiffOperator) -> Result<Self> {
        if op.dim_from() != self.fiber || op.dim_n() != self.nvars {
            return Err(LabError::ShapeMismatch {
                expected: op.dim_from(),
                got: self.fiber,
            });
        }
        if self.degree < op.order() {
            return Ok(Self::zero(self.nvars, op.dim_to(), 0));
        }
        let rows: Vec<f64> = operator_matrix(op, false, self.degree)
            .iter()
            .map(|r| r.iter().zip(&self.coeffs).map(|(a, c)| rational_to_f64(a) * c).sum())
            .collect();
        Self::from_coeffs(self.nvars, op.dim_to(), self.degree - op.order(), rows)
    }

    /// Formal adjoint `op* p`.
    pub fn apply_adjoint(&self, op: &DiffOperator) -> Result<Self> {
        if op.dim_to() != self.fiber || op.dim_n() != self.nvars {
            return Err(LabError::ShapeMismatch {
                expected: op.dim_to(),
                got: self.fiber,
            });
        }
        if self.degree < op.order() {
            return Ok(Self::zero(self.nvars, op.dim_from(), 0));
        }
        let rows: Vec<f64> = operator_matrix(op, true, self.degree)
            .iter()
            .map(|r| r.iter().zip(&self.coeffs).map(|(a, c)| rational_to_f64(a) * c).sum())
            .collect();
        Self::from_coeffs(self.nvars, op.dim_from(), self.degree - op.order(), rows)
    }

    /// `y ↦ p(y / r)`.
    pub fn rescale(&self, r: f64) -> Self {
        let monos = self.monomials();
        let m = monos.len();
        let mut p = self.clone();
        for c in 0..self.fiber {
            for (b, e) in monos.iter().enumerate() {
                p.coeffs[c * m + b] *= r.powi(-(e.iter().sum::<u32>() as i32));
            }
        }
        p
    }

    /// Samples the polynomial at the minimal-image offsets from `x0` on every grid point.
    pub fn sample(&self, grid: crate::spectral::GridSpec, x0: &[f64]) -> PeriodicField {
        let n = self.nvars;
        PeriodicField::from_fn(grid, self.fiber, |x, o| {
            let y = grid.min_image(x, x0);
            self.eval(&y[..n], o)
        })
    }
}

/// Exact matrix of `p ↦ op p` (or of the formal adjoint) on coefficient vectors of
/// degree `<= degree`; rows index output coefficients of degree `<= degree - order`.
pub fn operator_matrix(op: &DiffOperator, adjoint: bool, degree: u32) -> Vec<Vec<Rational>> {
    let n = op.dim_n();
    let k = op.order();
    let (fin, fout) = if adjoint {
        (op.dim_to(), op.dim_from())
    } else {
        (op.dim_from(), op.dim_to())
    };
    let monos = monomials_up_to(n, degree);
    if degree < k {
        return Vec::new();
    }
    let out_monos = monomials_up_to(n, degree - k);
    let out_idx = monomial_index(&out_monos);
    let (m, mo) = (monos.len(), out_monos.len());
    let mut rows = vec![vec![Rational::zero(); fin * m]; fout * mo];
    let sign = if adjoint && k % 2 == 1 {
        -Rational::one()
    } else {
        Rational::one()
    };
    for (alpha, mat) in op.coeffs() {
        for (b, beta) in monos.iter().enumerate() {
            if beta.iter().zip(alpha).any(|(bb, aa)| bb < aa) {
                continue;
            }
            let mut w = Rational::one();
            for v in 0..n {
                for t in beta[v] - alpha[v] + 1..=beta[v] {
                    w *= Rational::from_integer(t.into());
                }
            }
            let lowered: Vec<u32> = beta.iter().zip(alpha).map(|(bb, aa)| bb - aa).collect();
            let r = out_idx(&lowered);
            for i in 0..fout {
                for c in 0..fin {
                    let entry = if adjoint { mat.get(c, i) } else { mat.get(i, c) };
                    if entry.is_zero() {
                        continue;
                    }
                    rows[i * mo + r][c * m + b] += &w * entry * &sign;
                }
            }
        }
    }
    rows
}

/// Basis of the rational null space of `rows` (each vector has `ncols` entries).
pub fn exact_nullspace(mut rows: Vec<Vec<Rational>>, ncols: usize) -> Vec<Vec<Rational>> {
    let nr = rows.len();
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..ncols {
        let Some(p) = (rank..nr).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let inv = Rational::one() / &rows[rank][col];
        for c in col..ncols {
            let t = &rows[rank][c] * &inv;
            rows[rank][c] = t;
        }
        for r in 0..nr {
            if r == rank || rows[r][col].is_zero() {
                continue;
            }
            let f = rows[r][col].clone();
            for c in col..ncols {
                let t = &f * &rows[rank][c];
                rows[r][c] -= t;
            }
        }
        pivots.push(col);
        rank += 1;
        if rank == nr {
            break;
        }
    }
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&fc| {
            let mut v = vec![Rational::zero(); ncols];
            v[fc] = Rational::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -rows[r][fc].clone();
            }
            v
        })
        .collect()
}

/// Polynomial fields of degree `<= degree` with `B π = 0` and `C* π = 0`, computed exactly.
pub fn polynomial_kernel(
    op_b: &DiffOperator,
    op_c: Option<&DiffOperator>,
    degree: u32,
) -> Result<Vec<PolyField>> {
    let n = op_b.dim_n();
    let p = op_b.dim_from();
    let ncols = p * monomials_up_to(n, degree).len();
    let mut rows = operator_matrix(op_b, false, degree);
    if let Some(c) = op_c {
        if c.dim_to() != p || c.dim_n() != n {
            return Err(invalid("potential operator does not match B"));
        }
        rows.extend(operator_matrix(c, true, degree));
    }
    Ok(exact_nullspace(rows, ncols)
        .into_iter()
        .map(|v| PolyField {
            nvars: n,
            fiber: p,
            degree,
            coeffs: v.iter().map(rational_to_f64).collect(),
        })
        .collect())
}

/// Floating version of [`operator_matrix`].
pub fn operator_matrix_f64(op: &DiffOperator, adjoint: bool, degree: u32) -> DMatrix<f64> {
    let rows = operator_matrix(op, adjoint, degree);
    let nc = if adjoint { op.dim_to() } else { op.dim_from() } * monomials_up_to(op.dim_n(), degree).len();
    DMatrix::from_fn(rows.len(), nc, |i, j| rational_to_f64(&rows[i][j]))
}

/// Orthonormal basis of the numerical null space of `m` (relative cutoff `rel_tol`).
pub fn numerical_nullspace(m: &DMatrix<f64>, rel_tol: f64) -> Vec<DVector<f64>> {
    let nc = m.ncols();
    if m.nrows() == 0 {
        return (0..nc).map(|i| DVector::from_fn(nc, |j, _| f64::from(u8::from(i == j)))).collect();
    }
    // pad to a square system so the SVD exposes a full right basis
    let rows = m.nrows().max(nc);
    let mut padded = DMatrix::zeros(rows, nc);
    padded.view_mut((0, 0), (m.nrows(), nc)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    (0..nc)
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax.max(f64::MIN_POSITIVE))
        .map(|i| vt.row(i).transpose())
        .collect()
}

/// A field known near a point: a periodic part plus an optional polynomial in `x - origin`.
///
/// The polynomial part is only meaningful on balls around `origin` that do not wrap.
#[derive(Clone, Debug)]
pub struct LocalField {
    pub periodic: PeriodicField,
    pub poly: Option<PolyField>,
    pub origin: Vec<f64>,
}

impl LocalField {
    pub fn periodic(f: PeriodicField) -> Self {
        let n = f.grid().dim_n;
        Self {
            periodic: f,
            poly: None,
            origin: vec![0.0; n],
        }
    }

    pub fn with_poly(f: PeriodicField, poly: PolyField, origin: &[f64]) -> Result<Self> {
        if poly.fiber_dim() != f.fiber_dim() || poly.nvars() != f.grid().dim_n {
            return Err(invalid("polynomial part does not match the field"));
        }
        Ok(Self {
            periodic: f,
            poly: Some(poly),
            origin: origin.to_vec(),
        })
    }

    pub fn fiber_dim(&self) -> usize {
        self.periodic.fiber_dim()
    }

    fn offset(&self, mask: &BallMask, p: &crate::spectral::MaskPoint) -> Vec<f64> {
        let g = mask.grid();
        let x = g.point(p.index);
        g.min_image(&x, &self.origin)[..g.dim_n].to_vec()
    }

    /// `D^j` of the field at every mask point (fiber-slow monomial layout).
    pub fn derivatives_on(&self, mask: &BallMask, j: u32) -> Vec<Vec<f64>> {
        let d = derivatives(&self.periodic, j);
        mask.points()
            .iter()
            .map(|p| {
                let mut v = d.at(p.index).to_vec();
                if let Some(poly) = &self.poly {
                    let mut extra = vec![0.0; v.len()];
                    poly.eval_derivatives(&self.offset(mask, p), j, &mut extra);
                    v.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
                }
                v
            })
            .collect()
    }

    /// `op u` at every mask point.
    pub fn apply_on(&self, op: &DiffOperator, mask: &BallMask) -> Result<Vec<Vec<f64>>> {
        let b = apply_operator(op, &self.periodic)?;
        let bp = self.poly.as_ref().map(|p| p.apply(op)).transpose()?;
        Ok(mask
            .points()
            .iter()
            .map(|p| {
                let mut v = b.at(p.index).to_vec();
                if let Some(bp) = &bp {
                    let mut extra = vec![0.0; v.len()];
                    bp.eval(&self.offset(mask, p), &mut extra);
                    v.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
                }
                v
            })
            .collect())
    }

    /// `op u` on the whole grid, the polynomial part sampled at minimal-image offsets.
    pub fn apply_grid(&self, op: &DiffOperator) -> Result<PeriodicField> {
        let b = apply_operator(op, &self.periodic)?;
        match &self.poly {
            None => Ok(b),
            Some(p) => Ok(b.add(&p.apply(op)?.sample(*b.grid(), &self.origin))),
        }
    }
}
