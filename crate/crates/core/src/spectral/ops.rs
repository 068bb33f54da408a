use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use super::{Frequency, PeriodicField};
use crate::error::{invalid, LabError, Result};
use crate::poly::monomials_of_degree;
use crate::symbol::{
    build_potential, is_potential_pair, CompiledRational, CompiledSymbol, DiffOperator,
    ProjectorSymbol,
};

/// Applies a frequency-wise linear map `out = M(freq) in` to the spectrum of `f`.
pub fn apply_multiplier<F>(f: &PeriodicField, out_fiber: usize, m: F) -> PeriodicField
where
    F: Fn(&Frequency, &[Complex64], &mut [Complex64]) + Sync,
{
    let grid = *f.grid();
    let fiber = f.fiber_dim();
    let spec = f.spectrum();
    let mut out = vec![Complex64::default(); grid.len() * out_fiber];
    out.par_chunks_mut(out_fiber)
        .zip(spec.par_chunks(fiber))
        .enumerate()
        .for_each(|(idx, (o, i))| m(&grid.frequency(idx), i, o));
    PeriodicField::from_spectrum(grid, out_fiber, out)
}

/// `i^k` for integer `k`.
pub(crate) fn i_pow(k: i32) -> Complex64 {
    match k.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

pub(crate) fn mat_vec(m: &[f64], cols: usize, input: &[Complex64], out: &mut [Complex64], factor: Complex64) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (c, v) in input.iter().enumerate() {
            acc += *v * m[r * cols + c];
        }
        *o = acc * factor;
    }
}

/// A differential operator compiled for repeated spectral application.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    symbol: CompiledSymbol,
    order: u32,
    dim_n: usize,
}

impl SpectralOperator {
    pub fn new(op: &DiffOperator) -> Self {
        Self {
            symbol: op.symbol().compile(),
            order: op.order(),
            dim_n: op.dim_n(),
        }
    }

    pub fn dim_from(&self) -> usize {
        self.symbol.cols()
    }

    pub fn dim_to(&self) -> usize {
        self.symbol.rows()
    }

    /// Real symbol matrix at a frequency (without the `i^k` factor).
    pub fn matrix_at(&self, f: &Frequency, out: &mut [f64]) {
        self.symbol.eval_into(&f.discrete[..self.dim_n], out);
    }

    pub fn apply(&self, f: &PeriodicField) -> Result<PeriodicField> {
        if f.fiber_dim() != self.dim_from() {
            return Err(LabError::ShapeMismatch {
                expected: self.dim_from(),
                got: f.fiber_dim(),
            });
        }
        if f.grid().dim_n != self.dim_n {
            return Err(invalid("operator and grid dimensions differ"));
        }
        let cols = self.dim_from();
        let factor = i_pow(self.order as i32);
        Ok(apply_multiplier(f, self.dim_to(), |fr, i, o| {
            if fr.is_zero || fr.degenerate {
                o.iter_mut().for_each(|c| *c = Complex64::default());
                return;
            }
            let mut m = vec![0.0; o.len() * cols];
            self.matrix_at(fr, &mut m);
            mat_vec(&m, cols, i, o, factor);
        }))
    }

    /// Applies the formal adjoint `A*`, whose symbol is `(-1)^k A(ξ)^T`.
    pub fn apply_adjoint(&self, f: &PeriodicField) -> Result<PeriodicField> {
        if f.fiber_dim() != self.dim_to() {
            return Err(LabError::ShapeMismatch {
                expected: self.dim_to(),
                got: f.fiber_dim(),
            });
        }
        let (rows, cols) = (self.dim_to(), self.dim_from());
        // (-1)^k i^k = (-i)^k = i^{-k}
        let factor = i_pow(-(self.order as i32));
        Ok(apply_multiplier(f, cols, |fr, i, o| {
            if fr.is_zero || fr.degenerate {
                o.iter_mut().for_each(|c| *c = Complex64::default());
                return;
            }
            let mut m = vec![0.0; rows * cols];
            self.matrix_at(fr, &mut m);
            for (c, oc) in o.iter_mut().enumerate() {
                let mut acc = Complex64::default();
                for (r, v) in i.iter().enumerate() {
                    acc += *v * m[r * cols + c];
                }
                *oc = acc * factor;
            }
        }))
    }
}

/// `op f` computed spectrally with the multiplier `i^k A(2π ξ / period)`.
pub fn apply_operator(op: &DiffOperator, f: &PeriodicField) -> Result<PeriodicField> {
    SpectralOperator::new(op).apply(f)
}

/// A degree-zero projector symbol compiled for spectral application.
#[derive(Clone, Debug)]
pub struct SpectralProjector {
    symbol: CompiledRational,
    keep_degenerate: bool,
    dim_n: usize,
}

impl SpectralProjector {
    pub fn new(p: &ProjectorSymbol, dim_n: usize) -> Self {
        Self {
            symbol: p.symbol.compile(),
            keep_degenerate: p.keep_degenerate,
            dim_n,
        }
    }

    /// Projector onto `ker A(ξ)`; constants and pure Nyquist modes pass through.
    pub fn kernel_of(op: &DiffOperator) -> Result<Self> {
        Ok(Self::new(&ProjectorSymbol::kernel_of(op)?, op.dim_n()))
    }

    /// Projector onto `im B*(ξ)`; constants are removed.
    pub fn coimage_of(op: &DiffOperator) -> Result<Self> {
        Ok(Self::new(&ProjectorSymbol::coimage_of(op)?, op.dim_n()))
    }

    /// Projector onto `im B(ξ)`; constants are removed.
    pub fn range_of(op: &DiffOperator) -> Result<Self> {
        Ok(Self::new(&ProjectorSymbol::range_of(op)?, op.dim_n()))
    }

    pub fn dim(&self) -> usize {
        self.symbol.rows()
    }

    pub fn matrix_at(&self, f: &Frequency, out: &mut [f64]) {
        self.symbol.eval_into(&f.discrete[..self.dim_n], out);
    }

    /// Applies the projector; `keep_mean` controls the zero mode.
    pub fn apply_with(&self, f: &PeriodicField, keep_mean: bool) -> Result<PeriodicField> {
        let d = self.dim();
        if f.fiber_dim() != d {
            return Err(LabError::ShapeMismatch {
                expected: d,
                got: f.fiber_dim(),
            });
        }
        let one = Complex64::new(1.0, 0.0);
        Ok(apply_multiplier(f, d, |fr, i, o| {
            let pass = if fr.is_zero {
                keep_mean
            } else if fr.degenerate {
                self.keep_degenerate
            } else {
                let mut m = vec![0.0; d * d];
                self.matrix_at(fr, &mut m);
                mat_vec(&m, d, i, o, one);
                return;
            };
            if pass {
                o.copy_from_slice(i);
            } else {
                o.iter_mut().for_each(|c| *c = Complex64::default());
            }
        }))
    }

    /// Applies the projector with its default zero-mode convention.
    pub fn apply(&self, f: &PeriodicField) -> Result<PeriodicField> {
        self.apply_with(f, self.keep_degenerate)
    }
}

/// Orthogonal projection of `f` onto `A`-free fields (frequency-wise onto `ker A(ξ)`).
pub fn project_afree(op_a: &DiffOperator, f: &PeriodicField) -> Result<PeriodicField> {
    SpectralProjector::kernel_of(op_a)?.apply(f)
}

/// Result of `f = B u + S`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub u: PeriodicField,
    pub s: PeriodicField,
    /// Relative L² size of the part of `f` outside `ker A(ξ)`.
    pub afree_residual: f64,
    /// Largest relative size of `C(ξ)^T û(ξ)` over frequencies.
    pub c_star_residual: f64,
    /// `‖S - mean(f)‖∞`.
    pub s_deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionSummary {
    pub afree_residual: f64,
    pub c_star_residual: f64,
    pub s_deviation: f64,
    pub mean: Vec<f64>,
    pub u_l2: f64,
}

impl Decomposition {
    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            afree_residual: self.afree_residual,
            c_star_residual: self.c_star_residual,
            s_deviation: self.s_deviation,
            mean: self.s.mean(),
            u_l2: self.u.l2_norm(),
        }
    }
}

/// Tolerance on the relative non-A-free part accepted by [`decompose`].
pub const AFREE_TOLERANCE: f64 = 1e-8;

/// Splits an `A`-free field as `f = B u + S` with `û = i^{-k} B†(κ) f̂` and `S` the rest.
pub fn decompose(
    op_a: &DiffOperator,
    op_b: &DiffOperator,
    f: &PeriodicField,
) -> Result<Decomposition> {
    if !is_potential_pair(op_a, op_b)? {
        return Err(invalid("B is not a potential for A"));
    }
    let kernel = SpectralProjector::kernel_of(op_a)?;
    let outside = f.sub(&kernel.apply(f)?);
    let scale = f.l2_norm();
    let afree_residual = if scale > 0.0 {
        outside.l2_norm() / scale
    } else {
        0.0
    };
    if afree_residual > AFREE_TOLERANCE {
        return Err(LabError::NotAFree {
            residual: afree_residual,
            tolerance: AFREE_TOLERANCE,
        });
    }
    let u = apply_pseudoinverse(op_b, f)?;
    let bu = apply_operator(op_b, &u)?;
    let s = f.sub(&bu);
    let mean = f.mean();
    let s_deviation = s.shift(&mean.iter().map(|x| -x).collect::<Vec<_>>()).max_abs();
    let c_star_residual = c_star_residual(op_b, &u)?;
    Ok(Decomposition {
        u,
        s,
        afree_residual,
        c_star_residual,
        s_deviation,
    })
}

/// `B† f` with `û = i^{-k} B†(κ) f̂`; the zero mode and pure Nyquist modes map to zero.
pub fn apply_pseudoinverse(op_b: &DiffOperator, f: &PeriodicField) -> Result<PeriodicField> {
    if f.fiber_dim() != op_b.dim_to() {
        return Err(LabError::ShapeMismatch {
            expected: op_b.dim_to(),
            got: f.fiber_dim(),
        });
    }
    let parts = crate::symbol::decell_parts(op_b, rank_of(op_b)?)?;
    let pinv = parts.pseudoinverse().compile();
    let n = op_b.dim_n();
    let (p, q) = (op_b.dim_from(), op_b.dim_to());
    let factor = i_pow(-(op_b.order() as i32));
    Ok(apply_multiplier(f, p, |fr, i, o| {
        if fr.is_zero || fr.degenerate {
            o.iter_mut().for_each(|c| *c = Complex64::default());
            return;
        }
        let mut m = vec![0.0; p * q];
        pinv.eval_into(&fr.discrete[..n], &mut m);
        mat_vec(&m, q, i, o, factor);
    }))
}

pub(crate) fn rank_of(op: &DiffOperator) -> Result<usize> {
    let r = crate::symbol::check_constant_rank(op, 100)?;
    if !r.is_constant_rank {
        return Err(LabError::NotConstantRank {
            generic: r.rank,
            found: r.witness_rank.unwrap_or(r.rank),
            witness: r.witness.unwrap_or_default(),
        });
    }
    Ok(r.rank)
}

/// `max_ξ |C(ξ̂)^T û(ξ)| / max_ξ |û(ξ)|` with `C` the potential of `op_b`;
/// zero for elliptic `op_b`.
pub fn c_star_residual(op_b: &DiffOperator, u: &PeriodicField) -> Result<f64> {
    let pot = build_potential(op_b)?;
    if pot.elliptic {
        return Ok(0.0);
    }
    let c = pot.symbol.compile();
    let p = op_b.dim_from();
    let n = op_b.dim_n();
    let grid = *u.grid();
    let spec = u.spectrum();
    let worst = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let fr = grid.frequency(idx);
            let v = &spec[idx * p..(idx + 1) * p];
            let vn: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if fr.is_zero || fr.degenerate || vn == 0.0 {
                return (0.0, vn);
            }
            let k = fr.discrete_norm();
            let xi: Vec<f64> = fr.discrete[..n].iter().map(|x| x / k).collect();
            let mut m = vec![0.0; p * p];
            c.eval_into(&xi, &mut m);
            let mut acc = 0.0;
            for col in 0..p {
                let mut s = Complex64::default();
                for (r, z) in v.iter().enumerate() {
                    s += *z * m[r * p + col];
                }
                acc += s.norm_sqr();
            }
            (acc.sqrt(), vn)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(if worst.1 == 0.0 { 0.0 } else { worst.0 / worst.1 })
}

/// `I_s f`: multiplication by `|κ|^{-s}`, zero mode mapped to zero.
pub fn riesz_potential(s: f64, f: &PeriodicField) -> PeriodicField {
    apply_multiplier(f, f.fiber_dim(), |fr, i, o| {
        if fr.is_zero {
            o.iter_mut().for_each(|c| *c = Complex64::default());
            return;
        }
        let w = fr.full_norm().powf(-s);
        for (oc, ic) in o.iter_mut().zip(i) {
            *oc = *ic * w;
        }
    })
}

/// Convolution with a unit-mass Gaussian of standard deviation `ε / 3`.
pub fn mollify(f: &PeriodicField, eps: f64) -> Result<PeriodicField> {
    let h = f.grid().spacing();
    if eps < h * (1.0 - 1e-12) {
        return Err(invalid(format!(
            "mollifier width {eps} is below one grid cell ({h})"
        )));
    }
    let sigma = eps / 3.0;
    Ok(apply_multiplier(f, f.fiber_dim(), |fr, i, o| {
        let k2 = fr.full_norm().powi(2);
        let mut w = (-0.5 * sigma * sigma * k2).exp();
        if w < 1e-16 {
            w = 0.0;
        }
        for (oc, ic) in o.iter_mut().zip(i) {
            *oc = *ic * w;
        }
    }))
}

/// All partial derivatives of order `j`, stacked as `fiber × monomials_of_degree(n, j)`
/// (fiber index slow). Order zero returns the field itself.
pub fn derivatives(f: &PeriodicField, j: u32) -> PeriodicField {
    if j == 0 {
        return f.clone();
    }
    let n = f.grid().dim_n;
    let betas = monomials_of_degree(n, j);
    let fiber = f.fiber_dim();
    let nb = betas.len();
    let factor = i_pow(j as i32);
    apply_multiplier(f, fiber * nb, |fr, i, o| {
        if fr.is_zero || fr.degenerate {
            o.iter_mut().for_each(|c| *c = Complex64::default());
            return;
        }
        for (b, beta) in betas.iter().enumerate() {
            let mut w = 1.0;
            for a in 0..n {
                w *= fr.discrete[a].powi(beta[a] as i32);
            }
            for c in 0..fiber {
                o[c * nb + b] = i[c] * factor * w;
            }
        }
    })
}
