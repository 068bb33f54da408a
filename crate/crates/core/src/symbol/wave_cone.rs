use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::rank::{sample_directions, RANK_CUTOFF};
use super::DiffOperator;

#[derive(Clone, Debug, Serialize)]
pub struct ConeSample {
    pub xi: Vec<f64>,
    /// Orthonormal basis of `ker A(xi)`, one vector per entry.
    pub basis: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WaveCone {
    pub samples: Vec<ConeSample>,
    pub span_rank: usize,
    pub spanning: bool,
}

impl WaveCone {
    pub fn vectors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.samples.iter().flat_map(|s| s.basis.iter())
    }
}

/// Orthonormal null-space basis from the full SVD (right singular vectors
/// belonging to singular values under the relative cutoff).
pub fn kernel_basis(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (r, c) = m.shape();
    // pad to a square matrix so the SVD returns a complete right basis
    let k = r.max(c);
    let mut sq = DMatrix::zeros(k, c);
    sq.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    (0..c)
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= RANK_CUTOFF * smax)
        .map(|i| vt.row(i).iter().cloned().collect())
        .collect()
}

/// Samples `ker A(xi)` over the deterministic direction set plus `n_dirs` random ones
/// and tests whether the sampled cone spans the whole fiber.
pub fn wave_cone_sample(op: &DiffOperator, n_dirs: usize) -> WaveCone {
    let symbol = op.symbol().compile();
    let dirs = sample_directions(op.dim_n(), n_dirs, 0xc0_4e);
    let samples: Vec<ConeSample> = dirs
        .par_iter()
        .map(|d| ConeSample {
            xi: d.xi.clone(),
            basis: kernel_basis(&symbol.eval(&d.xi)),
        })
        .collect();
    let dim = op.dim_from();
    let stacked: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.basis.iter().flatten().cloned())
        .collect();
    let span_rank = if stacked.is_empty() {
        0
    } else {
        let m = DMatrix::from_row_slice(stacked.len() / dim, dim, &stacked);
        super::numerical_rank(&m).0
    };
    WaveCone {
        samples,
        span_rank,
        spanning: span_rank == dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_of_row_vector() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]);
        let k = kernel_basis(&m);
        assert_eq!(k.len(), 2);
        for v in &k {
            assert!(v[2].abs() < 1e-14);
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_of_tall_matrix() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let k = kernel_basis(&m);
        assert_eq!(k.len(), 1);
        assert!((k[0][0] + k[0][1]).abs() < 1e-12);
    }
}
