//! Moore–Penrose symbols via Decell's formula and the projector-based potential.

use serde::Serialize;

use super::{check_constant_rank, DiffOperator, PolySymbol, RationalSymbol};
use crate::error::{invalid, LabError, Result};
use crate::poly::{rat, Poly};

/// Number of random directions used when an operation certifies constant rank itself.
pub(crate) const RANK_SAMPLES: usize = 100;

/// Intermediate objects of Decell's construction for a symbol `B` of rank `r`.
///
/// With `G` the smaller of the Gram matrices `B B*` and `B* B` and
/// `det(t - G) = t^m + c_1 t^{m-1} + ... + c_m`, the pseudoinverse is
/// `B† = -c_r^{-1} B* [G^{r-1} + c_1 G^{r-2} + ... + c_{r-1}]` (left Gram), or the
/// mirrored product for the right Gram. `numerator` stores the polynomial part so
/// that `B† = numerator / c_r`.
#[derive(Clone, Debug)]
pub struct DecellParts {
    pub symbol: PolySymbol,
    pub rank: usize,
    pub char_coeffs: Vec<Poly>,
    pub numerator: PolySymbol,
    pub c_r: Poly,
}

/// Characteristic-polynomial coefficients `c_1..c_upto` of a square symbol (Faddeev–LeVerrier).
fn char_coeffs(g: &PolySymbol, upto: usize) -> Vec<Poly> {
    let p = g.rows();
    let nvars = g.nvars();
    let upto = upto.min(p);
    let mut coeffs = Vec::with_capacity(upto);
    if upto == 0 {
        return coeffs;
    }
    let mut m = g.clone();
    coeffs.push(-&m.trace());
    for k in 2..=upto {
        let shifted = m.add(&PolySymbol::identity(nvars, p).scale_poly(&coeffs[k - 2]));
        m = g.mul(&shifted);
        coeffs.push((-&m.trace()).scale(&rat(1, k as i64)));
    }
    coeffs
}

pub fn decell_parts(op: &DiffOperator, rank: usize) -> Result<DecellParts> {
    let b = op.symbol();
    let bt = b.transpose();
    let left = b.rows() <= b.cols();
    let g = if left { b.mul(&bt) } else { bt.mul(&b) };
    let p = g.rows();
    if rank == 0 || rank > p {
        return Err(LabError::RankMismatch(format!(
            "rank {rank} impossible for a {}x{} symbol",
            b.rows(),
            b.cols()
        )));
    }
    let coeffs = char_coeffs(&g, rank + 1);
    let c_r = coeffs[rank - 1].clone();
    if c_r.is_zero() {
        return Err(LabError::RankMismatch(format!(
            "c_{rank} vanishes identically: rank is below {rank}"
        )));
    }
    if let Some(next) = coeffs.get(rank) {
        if !next.is_zero() {
            return Err(LabError::RankMismatch(format!(
                "c_{} does not vanish: rank exceeds {rank}",
                rank + 1
            )));
        }
    }
    let nvars = b.nvars();
    let mut horner = PolySymbol::identity(nvars, p);
    for c in coeffs.iter().take(rank - 1) {
        horner = horner
            .mul(&g)
            .add(&PolySymbol::identity(nvars, p).scale_poly(c));
    }
    let minus_one = rat(-1, 1);
    let numerator = if left {
        bt.mul(&horner).scale(&minus_one)
    } else {
        horner.mul(&bt).scale(&minus_one)
    };
    Ok(DecellParts {
        symbol: b,
        rank,
        char_coeffs: coeffs,
        numerator,
        c_r,
    })
}

impl DecellParts {
    pub fn pseudoinverse(&self) -> RationalSymbol {
        RationalSymbol::new(self.numerator.clone(), self.c_r.clone())
            .expect("c_r is a nonzero homogeneous polynomial")
    }

    /// `B B† B = B` and symmetry of `B B†`, `B† B`, checked as polynomial identities.
    pub fn penrose_identities_hold(&self) -> bool {
        let b = &self.symbol;
        let bn = b.mul(&self.numerator);
        let nb = self.numerator.mul(b);
        let lhs = bn.mul(b);
        let rhs = b.scale_poly(&self.c_r);
        lhs.sub(&rhs).is_zero() && bn.sub(&bn.transpose()).is_zero() && nb.sub(&nb.transpose()).is_zero()
    }

    /// `c_r (Id - B† B)`, polynomial of degree `deg c_r`.
    pub fn potential_symbol(&self) -> PolySymbol {
        let nvars = self.symbol.nvars();
        let p = self.symbol.cols();
        PolySymbol::identity(nvars, p)
            .scale_poly(&self.c_r)
            .sub(&self.numerator.mul(&self.symbol))
    }
}

/// `B†(xi)` as an exact rational symbol of degree `-order`.
pub fn moore_penrose(op: &DiffOperator, rank: usize) -> Result<RationalSymbol> {
    Ok(decell_parts(op, rank)?.pseudoinverse())
}

/// A potential `C` for `B`: `im C(xi) = ker B(xi)` for all `xi != 0`.
#[derive(Clone, Debug)]
pub struct Potential {
    pub symbol: PolySymbol,
    pub operator: Option<DiffOperator>,
    pub rank_of_base: usize,
    pub elliptic: bool,
}

impl Potential {
    pub fn degree(&self) -> i32 {
        self.symbol.degree()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialSummary {
    pub elliptic: bool,
    pub degree: i32,
    pub exact_sequence: bool,
    pub entries: Vec<Vec<String>>,
}

/// Builds `C(xi) = c_r(xi) (Id - B†(xi) B(xi))` and its operator transcription.
pub fn build_potential(op: &DiffOperator) -> Result<Potential> {
    let report = check_constant_rank(op, RANK_SAMPLES)?;
    if !report.is_constant_rank {
        return Err(not_constant_rank(&report));
    }
    let parts = decell_parts(op, report.rank)?;
    let elliptic = report.rank == op.dim_from();
    let symbol = if elliptic {
        PolySymbol::zeros(op.dim_n(), op.dim_from(), op.dim_from(), parts.c_r.homogeneous_degree().unwrap_or(0) as i32)
    } else {
        parts.potential_symbol()
    };
    let operator = DiffOperator::from_symbol(&symbol)?;
    Ok(Potential {
        symbol,
        operator,
        rank_of_base: report.rank,
        elliptic,
    })
}

impl Potential {
    pub fn summary(&self, base: &DiffOperator) -> PotentialSummary {
        PotentialSummary {
            elliptic: self.elliptic,
            degree: self.degree(),
            exact_sequence: base.symbol().mul(&self.symbol).is_zero(),
            entries: self.symbol.to_strings(),
        }
    }
}

pub(crate) fn not_constant_rank(report: &super::RankReport) -> LabError {
    LabError::NotConstantRank {
        generic: report.rank,
        found: report.witness_rank.unwrap_or(report.rank),
        witness: report.witness.clone().unwrap_or_default(),
    }
}

/// Degree-zero orthogonal projector symbol `numerator / denominator`.
///
/// `keep_degenerate` says how the projector acts at nonzero frequencies whose
/// discrete wavevector vanishes (pure Nyquist modes): identity when true, zero otherwise.
#[derive(Clone, Debug)]
pub struct ProjectorSymbol {
    pub symbol: RationalSymbol,
    pub keep_degenerate: bool,
}

fn certified_parts(op: &DiffOperator) -> Result<DecellParts> {
    let report = check_constant_rank(op, RANK_SAMPLES)?;
    if !report.is_constant_rank {
        return Err(not_constant_rank(&report));
    }
    decell_parts(op, report.rank)
}

impl ProjectorSymbol {
    /// Orthogonal projector onto `ker A(xi)`, i.e. `Id - A†A`.
    pub fn kernel_of(op: &DiffOperator) -> Result<Self> {
        let parts = certified_parts(op)?;
        Ok(Self {
            symbol: RationalSymbol::new(parts.potential_symbol(), parts.c_r.clone())?,
            keep_degenerate: true,
        })
    }

    /// Orthogonal projector onto `im B(xi)`, i.e. `B B†`.
    pub fn range_of(op: &DiffOperator) -> Result<Self> {
        let parts = certified_parts(op)?;
        Ok(Self {
            symbol: RationalSymbol::new(parts.symbol.mul(&parts.numerator), parts.c_r.clone())?,
            keep_degenerate: false,
        })
    }

    /// Orthogonal projector onto `im B*(xi)`, i.e. `B† B`.
    pub fn coimage_of(op: &DiffOperator) -> Result<Self> {
        let parts = certified_parts(op)?;
        Ok(Self {
            symbol: RationalSymbol::new(parts.numerator.mul(&parts.symbol), parts.c_r.clone())?,
            keep_degenerate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbol.rows()
    }
}

/// Checks `A(xi) B(xi) = 0` exactly and `rank A + rank B = dim` on the sampling set.
pub fn is_potential_pair(op_a: &DiffOperator, op_b: &DiffOperator) -> Result<bool> {
    if op_a.dim_from() != op_b.dim_to() || op_a.dim_n() != op_b.dim_n() {
        return Err(invalid("operators do not compose"));
    }
    if !op_a.symbol().mul(&op_b.symbol()).is_zero() {
        return Ok(false);
    }
    let ra = check_constant_rank(op_a, RANK_SAMPLES)?;
    let rb = check_constant_rank(op_b, RANK_SAMPLES)?;
    Ok(ra.is_constant_rank && rb.is_constant_rank && ra.rank + rb.rank == op_a.dim_from())
}
