use nalgebra::DMatrix;
use num_traits::{FromPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{DiffOperator, PolySymbol};
use crate::error::{invalid, LabError, Result};
use crate::poly::Rational;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_CUTOFF: f64 = 1e-9;

/// Relative singular values in this band send the sample to exact arithmetic.
const AMBIGUOUS_BAND: (f64, f64) = (1e-13, 1e-6);

const DEFAULT_SEED: u64 = 0x5eed_c0de;

#[derive(Clone, Debug, Serialize)]
pub struct RankSample {
    pub xi: Vec<f64>,
    pub rank: usize,
    pub certified_exact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub is_constant_rank: bool,
    pub rank: usize,
    #[serde(skip)]
    pub samples: Vec<RankSample>,
    pub n_samples: usize,
    pub witness: Option<Vec<f64>>,
    pub witness_rank: Option<usize>,
}

/// A sample direction; integer directions are also kept exactly.
#[derive(Clone, Debug)]
pub struct Direction {
    pub xi: Vec<f64>,
    pub exact: Option<Vec<i64>>,
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Low-discrepancy set of `200 n` unit vectors (Fibonacci sphere for n = 3).
fn low_discrepancy(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let m = 400;
            (0..m)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        _ => {
            let m = 600;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / m as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * j as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
    }
}

/// All nonzero vectors of `{-1, 0, 1}^n`: coordinate axes and sign diagonals.
fn lattice_directions(n: usize) -> Vec<Vec<i64>> {
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let d = (code % 3) as i64 - 1;
                    code /= 3;
                    d
                })
                .collect::<Vec<_>>()
        })
        .filter(|v| v.iter().any(|&x| x != 0))
        .collect()
}

/// Deterministic sampling set: low-discrepancy ∪ axes/diagonals ∪ `n_random` seeded directions.
pub fn sample_directions(n: usize, n_random: usize, seed: u64) -> Vec<Direction> {
    let mut dirs: Vec<Direction> = low_discrepancy(n)
        .into_iter()
        .map(|xi| Direction { xi, exact: None })
        .collect();
    for v in lattice_directions(n) {
        dirs.push(Direction {
            xi: normalized(v.iter().map(|&x| x as f64).collect()),
            exact: Some(v),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        dirs.push(Direction {
            xi: normalized(v),
            exact: None,
        });
    }
    dirs
}

/// Numerical rank with the relative cutoff, plus whether the spectrum is ambiguous.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, bool) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0, false);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return (0, false);
    }
    let rank = sv.iter().filter(|&&s| s > RANK_CUTOFF * smax).count();
    let ambiguous = sv
        .iter()
        .any(|&s| s > AMBIGUOUS_BAND.0 * smax && s < AMBIGUOUS_BAND.1 * smax);
    (rank, ambiguous)
}

/// Rank over the rationals by fraction-exact Gaussian elimination.
pub fn exact_rank(mut rows: Vec<Vec<Rational>>) -> usize {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..nc {
        let Some(p) = (rank..nr).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank][col].clone();
        for r in rank + 1..nr {
            if rows[r][col].is_zero() {
                continue;
            }
            let f = &rows[r][col] / &pivot;
            for c in col..nc {
                let t = &f * &rows[rank][c];
                rows[r][c] -= t;
            }
        }
        rank += 1;
        if rank == nr {
            break;
        }
    }
    rank
}

fn rank_at(symbol: &PolySymbol, dir: &Direction) -> RankSample {
    if let Some(v) = &dir.exact {
        let xr: Vec<Rational> = v.iter().map(|&x| Rational::from_integer(x.into())).collect();
        return RankSample {
            xi: dir.xi.clone(),
            rank: exact_rank(symbol.eval_rational(&xr)),
            certified_exact: true,
        };
    }
    let (rank, ambiguous) = numerical_rank(&symbol.eval_f64(&dir.xi));
    if ambiguous {
        // every finite double is a dyadic rational, so this evaluates at the same point
        let xr: Vec<Rational> = dir
            .xi
            .iter()
            .map(|&x| Rational::from_f64(x).expect("finite direction"))
            .collect();
        return RankSample {
            xi: dir.xi.clone(),
            rank: exact_rank(symbol.eval_rational(&xr)),
            certified_exact: true,
        };
    }
    RankSample {
        xi: dir.xi.clone(),
        rank,
        certified_exact: false,
    }
}

pub fn check_constant_rank(op: &DiffOperator, n_samples: usize) -> Result<RankReport> {
    check_constant_rank_seeded(op, n_samples, DEFAULT_SEED)
}

pub fn check_constant_rank_seeded(
    op: &DiffOperator,
    n_samples: usize,
    seed: u64,
) -> Result<RankReport> {
    if n_samples < 50 {
        return Err(invalid("constant-rank check needs at least 50 random samples"));
    }
    let symbol = op.symbol();
    if symbol.is_zero() {
        return Err(LabError::DegenerateOperator);
    }
    let dirs = sample_directions(op.dim_n(), n_samples, seed);
    let samples: Vec<RankSample> = dirs.par_iter().map(|d| rank_at(&symbol, d)).collect();
    let rank = samples.iter().map(|s| s.rank).max().unwrap_or(0);
    let witness = samples.iter().find(|s| s.rank != rank);
    Ok(RankReport {
        is_constant_rank: witness.is_none(),
        rank,
        n_samples: samples.len(),
        witness: witness.map(|s| s.xi.clone()),
        witness_rank: witness.map(|s| s.rank),
        samples,
    })
}
