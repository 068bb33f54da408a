use std::sync::OnceLock;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::fft::fft_nd;
use super::GridSpec;
use crate::error::{LabError, Result};
use crate::util::{self, det_max, det_sum};

/// Real vector field sampled on a torus grid, row-major with the fiber index fastest.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    grid: GridSpec,
    fiber: usize,
    values: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl PeriodicField {
    pub fn new(grid: GridSpec, fiber: usize, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() * fiber {
            return Err(LabError::ShapeMismatch {
                expected: grid.len() * fiber,
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            fiber,
            values,
            spectrum: OnceLock::new(),
        })
    }

    pub fn zeros(grid: GridSpec, fiber: usize) -> Self {
        Self::new(grid, fiber, vec![0.0; grid.len() * fiber]).expect("consistent shape")
    }

    pub fn constant(grid: GridSpec, c: &[f64]) -> Self {
        let values = c.iter().cloned().cycle().take(grid.len() * c.len()).collect();
        Self::new(grid, c.len(), values).expect("consistent shape")
    }

    /// Samples `f(x, out)` at every grid point.
    pub fn from_fn<F>(grid: GridSpec, fiber: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let mut values = vec![0.0; grid.len() * fiber];
        values
            .par_chunks_mut(fiber.max(1))
            .enumerate()
            .for_each(|(idx, out)| f(&grid.point(idx)[..grid.dim_n], out));
        Self::new(grid, fiber, values).expect("consistent shape")
    }

    /// Builds a field from frequency-major, fiber-fastest Fourier coefficients.
    pub fn from_spectrum(grid: GridSpec, fiber: usize, spectrum: Vec<Complex64>) -> Self {
        let n = grid.len();
        assert_eq!(spectrum.len(), n * fiber);
        let mut values = vec![0.0; n * fiber];
        let mut buf = vec![Complex64::default(); n];
        for c in 0..fiber {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = spectrum[i * fiber + c];
            }
            fft_nd(&mut buf, grid.dim_n, grid.points_per_axis, true);
            for (i, b) in buf.iter().enumerate() {
                values[i * fiber + c] = b.re;
            }
        }
        let field = Self::new(grid, fiber, values).expect("consistent shape");
        let _ = field.spectrum.set(spectrum);
        field
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.fiber..(idx + 1) * self.fiber]
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.fiber).cloned().collect()
    }

    /// Discrete Fourier coefficients (unnormalized forward transform), computed once.
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| {
            let n = self.grid.len();
            let mut out = vec![Complex64::default(); n * self.fiber];
            let mut buf = vec![Complex64::default(); n];
            for c in 0..self.fiber {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(self.values[i * self.fiber + c], 0.0);
                }
                fft_nd(&mut buf, self.grid.dim_n, self.grid.points_per_axis, false);
                for (i, b) in buf.iter().enumerate() {
                    out[i * self.fiber + c] = *b;
                }
            }
            out
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..self.fiber)
            .map(|c| det_sum(n, |i| self.values[i * self.fiber + c]) / n as f64)
            .collect()
    }

    pub fn map<F>(&self, out_fiber: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let mut values = vec![0.0; self.grid.len() * out_fiber];
        values
            .par_chunks_mut(out_fiber)
            .zip(self.values.par_chunks(self.fiber))
            .for_each(|(o, v)| f(v, o));
        Self::new(self.grid, out_fiber, values).expect("consistent shape")
    }

    /// Like [`map`](Self::map) with the grid point passed in.
    pub fn map_with_point<F>(&self, out_fiber: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    {
        let mut values = vec![0.0; self.grid.len() * out_fiber];
        let grid = self.grid;
        values
            .par_chunks_mut(out_fiber)
            .zip(self.values.par_chunks(self.fiber))
            .enumerate()
            .for_each(|(idx, (o, v))| f(&grid.point(idx)[..grid.dim_n], v, o));
        Self::new(self.grid, out_fiber, values).expect("consistent shape")
    }

    fn check_same(&self, other: &Self) {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        assert_eq!(self.fiber, other.fiber, "fiber mismatch");
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.check_same(other);
        let values = self
            .values
            .par_iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Self::new(self.grid, self.fiber, values).expect("consistent shape")
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: f64) -> Self {
        let values = self.values.par_iter().map(|a| s * a).collect();
        Self::new(self.grid, self.fiber, values).expect("consistent shape")
    }

    /// Adds a constant vector at every point.
    pub fn shift(&self, c: &[f64]) -> Self {
        assert_eq!(c.len(), self.fiber);
        let f = self.fiber;
        let values = self
            .values
            .par_iter()
            .enumerate()
            .map(|(i, a)| a + c[i % f])
            .collect();
        Self::new(self.grid, self.fiber, values).expect("consistent shape")
    }

    /// `∫ <self, other> dx` over the torus.
    pub fn inner(&self, other: &Self) -> f64 {
        self.check_same(other);
        det_sum(self.values.len(), |i| self.values[i] * other.values[i]) * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest pointwise Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        det_max(self.grid.len(), |i| util::norm(self.at(i)))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        det_max(self.values.len(), |i| self.values[i].abs())
    }

    /// Concatenates fibers of fields on the same grid.
    pub fn stack(fields: &[Self]) -> Self {
        let grid = fields[0].grid;
        let fiber: usize = fields.iter().map(|f| f.fiber).sum();
        let mut values = Vec::with_capacity(grid.len() * fiber);
        for idx in 0..grid.len() {
            for f in fields {
                assert_eq!(f.grid, grid);
                values.extend_from_slice(f.at(idx));
            }
        }
        Self::new(grid, fiber, values).expect("consistent shape")
    }

    /// Components `start..start+count` as a new field.
    pub fn slice_fiber(&self, start: usize, count: usize) -> Self {
        let mut values = Vec::with_capacity(self.grid.len() * count);
        for idx in 0..self.grid.len() {
            values.extend_from_slice(&self.at(idx)[start..start + count]);
        }
        Self::new(self.grid, count, values).expect("consistent shape")
    }

    /// Seeded zero-mean random field whose Fourier support is `max |j| <= band`,
    /// normalized to unit root-mean-square value.
    pub fn random_band_limited(grid: GridSpec, fiber: usize, band: usize, seed: u64) -> Self {
        let mut rng = util::rng(seed);
        let white = Self::new(grid, fiber, util::gaussian_vec(&mut rng, grid.len() * fiber))
            .expect("consistent shape");
        let band = band.min(grid.points_per_axis / 2 - 1) as i64;
        let mut spec = white.spectrum().to_vec();
        for (idx, chunk) in spec.chunks_mut(fiber).enumerate() {
            let f = grid.frequency(idx);
            if f.is_zero || f.max_abs() > band {
                chunk.iter_mut().for_each(|c| *c = Complex64::default());
            }
        }
        let field = Self::from_spectrum(grid, fiber, spec);
        let rms = (field.inner(&field) / (grid.volume() * fiber as f64)).sqrt();
        if rms > 0.0 {
            field.scale(1.0 / rms)
        } else {
            field
        }
    }

    /// Trigonometric interpolation onto a grid with `points_per_axis` points.
    /// Nyquist modes of the coarser grid are dropped.
    pub fn resample(&self, points_per_axis: usize) -> Result<Self> {
        let target = self.grid.with_points(points_per_axis)?;
        let src = self.spectrum();
        let fiber = self.fiber;
        let ratio = target.len() as f64 / self.grid.len() as f64;
        let half = self.grid.points_per_axis.min(points_per_axis) as i64 / 2;
        let mut out = vec![Complex64::default(); target.len() * fiber];
        let n = self.grid.dim_n;
        for idx in 0..self.grid.len() {
            let f = self.grid.frequency(idx);
            if f.integer[..n].iter().any(|j| j.abs() >= half) {
                continue;
            }
            let t = target.flatten_wrapped(&f.integer);
            for c in 0..fiber {
                out[t * fiber + c] = src[idx * fiber + c] * ratio;
            }
        }
        Ok(Self::from_spectrum(target, fiber, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_round_trip() {
        let g = GridSpec::unit(2, 16).unwrap();
        let f = PeriodicField::random_band_limited(g, 2, 5, 3);
        let back = PeriodicField::from_spectrum(g, 2, f.spectrum().to_vec());
        assert!(back.sub(&f).max_abs() < 1e-12);
        assert!(f.mean().iter().all(|m| m.abs() < 1e-12));
        assert!((f.l2_norm() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn conjugate_symmetry() {
        let g = GridSpec::unit(2, 8).unwrap();
        let f = PeriodicField::random_band_limited(g, 1, 3, 1);
        let s = f.spectrum();
        for idx in 0..g.len() {
            let fr = g.frequency(idx);
            let neg = g.flatten_wrapped(&[-fr.integer[0], -fr.integer[1], 0]);
            assert!((s[idx] - s[neg].conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn resample_preserves_band_limited_fields() {
        let g = GridSpec::unit(2, 16).unwrap();
        let f = PeriodicField::random_band_limited(g, 1, 4, 9);
        let up = f.resample(32).unwrap();
        let down = up.resample(16).unwrap();
        assert!(down.sub(&f).max_abs() < 1e-12);
        // values at shared points agree
        for idx in 0..g.len() {
            let ij = g.unflatten(idx);
            let j = up.grid().flatten(&[2 * ij[0], 2 * ij[1]]);
            assert!((up.at(j)[0] - f.at(idx)[0]).abs() < 1e-12);
        }
    }
}
