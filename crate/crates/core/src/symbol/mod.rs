//! Exact symbol algebra for homogeneous constant-coefficient operators.

mod decell;
mod operator;
mod rank;
mod wave_cone;

pub use decell::{
    build_potential, decell_parts, is_potential_pair, moore_penrose, DecellParts, Potential,
    PotentialSummary, ProjectorSymbol,
};
pub use operator::{
    CoeffEntry, DiffOperator, OperatorFile, OperatorSpec, RationalMatrix, RationalValue,
};
pub use rank::{
    check_constant_rank, check_constant_rank_seeded, exact_rank, numerical_rank, sample_directions,
    RankReport, RankSample, RANK_CUTOFF,
};
pub use wave_cone::{kernel_basis, wave_cone_sample, ConeSample, WaveCone};

use nalgebra::DMatrix;
use num_traits::Zero;

use crate::error::{invalid, Result};
use crate::poly::{CompiledPoly, Poly, Rational};

/// Matrix of homogeneous polynomials in `xi`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolySymbol {
    nvars: usize,
    rows: usize,
    cols: usize,
    entries: Vec<Poly>,
    degree: i32,
}

impl PolySymbol {
    pub fn from_entries(
        nvars: usize,
        rows: usize,
        cols: usize,
        entries: Vec<Poly>,
        degree: i32,
    ) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(invalid("entry count does not match shape"));
        }
        for p in &entries {
            if p.nvars() != nvars {
                return Err(invalid("entry has wrong number of variables"));
            }
            if !p.is_zero() && p.homogeneous_degree().map(|d| d as i32) != Some(degree) {
                return Err(invalid(format!(
                    "entry {p} is not homogeneous of degree {degree}"
                )));
            }
        }
        Ok(Self {
            nvars,
            rows,
            cols,
            entries,
            degree,
        })
    }

    pub fn zeros(nvars: usize, rows: usize, cols: usize, degree: i32) -> Self {
        Self {
            nvars,
            rows,
            cols,
            entries: vec![Poly::zero(nvars); rows * cols],
            degree,
        }
    }

    pub fn identity(nvars: usize, n: usize) -> Self {
        let mut s = Self::zeros(nvars, n, n, 0);
        for i in 0..n {
            s.entries[i * n + i] = Poly::one(nvars);
        }
        s
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn degree(&self) -> i32 {
        self.degree
    }

    pub fn entry(&self, i: usize, j: usize) -> &Poly {
        &self.entries[i * self.cols + j]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Poly::is_zero)
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.entry(i, j).clone());
            }
        }
        Self {
            nvars: self.nvars,
            rows: self.cols,
            cols: self.rows,
            entries,
            degree: self.degree,
        }
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "symbol product shape mismatch");
        let mut entries = Vec::with_capacity(self.rows * rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = Poly::zero(self.nvars);
                for l in 0..self.cols {
                    let a = self.entry(i, l);
                    let b = rhs.entry(l, j);
                    if !a.is_zero() && !b.is_zero() {
                        acc += &(a * b);
                    }
                }
                entries.push(acc);
            }
        }
        Self {
            nvars: self.nvars,
            rows: self.rows,
            cols: rhs.cols,
            entries,
            degree: self.degree + rhs.degree,
        }
    }

    fn combine(&self, rhs: &Self, sign: bool) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let degree = if self.is_zero() {
            rhs.degree
        } else {
            assert!(rhs.is_zero() || self.degree == rhs.degree, "degree mismatch");
            self.degree
        };
        let entries = self
            .entries
            .iter()
            .zip(&rhs.entries)
            .map(|(a, b)| if sign { a + b } else { a - b })
            .collect();
        Self {
            nvars: self.nvars,
            rows: self.rows,
            cols: self.cols,
            entries,
            degree,
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.combine(rhs, true)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.combine(rhs, false)
    }

    /// Multiplies every entry by a homogeneous scalar polynomial.
    pub fn scale_poly(&self, p: &Poly) -> Self {
        let d = p.homogeneous_degree().unwrap_or(0) as i32;
        Self {
            nvars: self.nvars,
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e * p).collect(),
            degree: self.degree + d,
        }
    }

    pub fn scale(&self, c: &Rational) -> Self {
        Self {
            entries: self.entries.iter().map(|e| e.scale(c)).collect(),
            ..self.clone()
        }
    }

    pub fn trace(&self) -> Poly {
        assert_eq!(self.rows, self.cols);
        let mut acc = Poly::zero(self.nvars);
        for i in 0..self.rows {
            acc += self.entry(i, i);
        }
        acc
    }

    pub fn eval_rational(&self, xi: &[Rational]) -> Vec<Vec<Rational>> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| {
                        let p = self.entry(i, j);
                        if p.is_zero() {
                            Rational::zero()
                        } else {
                            p.eval_rational(xi)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn eval_f64(&self, xi: &[f64]) -> DMatrix<f64> {
        self.compile().eval(xi)
    }

    pub fn compile(&self) -> CompiledSymbol {
        CompiledSymbol {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(Poly::compile).collect(),
        }
    }

    /// Entries as display strings, row-major.
    pub fn to_strings(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.entry(i, j).to_string()).collect())
            .collect()
    }
}

/// Float evaluator for a polynomial symbol.
#[derive(Clone, Debug)]
pub struct CompiledSymbol {
    rows: usize,
    cols: usize,
    entries: Vec<CompiledPoly>,
}

impl CompiledSymbol {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Writes the row-major evaluation into `out`.
    pub fn eval_into(&self, xi: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.entries) {
            *o = if p.is_zero() { 0.0 } else { p.eval(xi) };
        }
    }

    pub fn eval(&self, xi: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.rows * self.cols];
        self.eval_into(xi, &mut buf);
        DMatrix::from_row_slice(self.rows, self.cols, &buf)
    }
}

/// `numerator(xi) / denominator(xi)` with a scalar homogeneous denominator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalSymbol {
    pub numerator: PolySymbol,
    pub denominator: Poly,
    pub degree: i32,
}

impl RationalSymbol {
    pub fn new(numerator: PolySymbol, denominator: Poly) -> Result<Self> {
        let dd = denominator
            .homogeneous_degree()
            .ok_or_else(|| invalid("denominator must be a nonzero homogeneous polynomial"))?;
        let degree = numerator.degree() - dd as i32;
        Ok(Self {
            numerator,
            denominator,
            degree,
        })
    }

    pub fn rows(&self) -> usize {
        self.numerator.rows()
    }

    pub fn cols(&self) -> usize {
        self.numerator.cols()
    }

    pub fn eval_f64(&self, xi: &[f64]) -> DMatrix<f64> {
        self.compile().eval(xi)
    }

    pub fn compile(&self) -> CompiledRational {
        CompiledRational {
            numerator: self.numerator.compile(),
            denominator: self.denominator.compile(),
        }
    }

    /// Exact evaluation; `None` when the denominator vanishes at `xi`.
    pub fn eval_rational(&self, xi: &[Rational]) -> Option<Vec<Vec<Rational>>> {
        let d = self.denominator.eval_rational(xi);
        if d.is_zero() {
            return None;
        }
        Some(
            self.numerator
                .eval_rational(xi)
                .into_iter()
                .map(|row| row.into_iter().map(|v| v / &d).collect())
                .collect(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct CompiledRational {
    numerator: CompiledSymbol,
    denominator: CompiledPoly,
}

impl CompiledRational {
    pub fn rows(&self) -> usize {
        self.numerator.rows()
    }

    pub fn cols(&self) -> usize {
        self.numerator.cols()
    }

    pub fn eval_into(&self, xi: &[f64], out: &mut [f64]) {
        self.numerator.eval_into(xi, out);
        let d = self.denominator.eval(xi);
        for o in out.iter_mut() {
            *o /= d;
        }
    }

    pub fn eval(&self, xi: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.rows() * self.cols()];
        self.eval_into(xi, &mut buf);
        DMatrix::from_row_slice(self.rows(), self.cols(), &buf)
    }
}

/// `symbol_of`: the polynomial symbol of an operator.
pub fn symbol_of(op: &DiffOperator) -> PolySymbol {
    op.symbol()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn div_and_grad_symbols() {
        let div = symbol_of(&DiffOperator::divergence(3).unwrap());
        assert_eq!((div.rows(), div.cols(), div.degree()), (1, 3, 1));
        assert_eq!(div.to_strings(), vec![vec!["x1", "x2", "x3"]]);
        let grad = symbol_of(&DiffOperator::gradient(2).unwrap());
        assert_eq!(grad.to_strings(), vec![vec!["x1"], vec!["x2"]]);
    }

    #[test]
    fn transcription_round_trip() {
        let op = DiffOperator::sym_gradient(3).unwrap();
        let back = DiffOperator::from_symbol(&op.symbol()).unwrap().unwrap();
        assert_eq!(back.coeffs(), op.coeffs());
        assert!(DiffOperator::from_symbol(&PolySymbol::zeros(2, 2, 2, 3))
            .unwrap()
            .is_none());
    }

    #[test]
    fn rejects_inhomogeneous_entries() {
        let p = &Poly::var(2, 0) + &(&Poly::var(2, 1) * &Poly::var(2, 1));
        assert!(PolySymbol::from_entries(2, 1, 1, vec![p], 1).is_err());
    }
}
