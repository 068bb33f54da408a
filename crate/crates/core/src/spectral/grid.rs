use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Largest number of grid points accepted by [`GridSpec::new`].
pub const MAX_POINTS: usize = 1 << 24;

fn default_period() -> f64 {
    1.0
}

/// Uniform grid on the torus `[0, period)^dim_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim_n: usize,
    pub points_per_axis: usize,
    #[serde(default = "default_period")]
    pub period: f64,
}

/// Wavevector data for one spectral index.
#[derive(Clone, Copy, Debug)]
pub struct Frequency {
    /// Signed integer frequency per axis; the Nyquist index maps to `-m/2`.
    pub integer: [i64; 3],
    /// `2π j / period` with the Nyquist component set to zero. Odd multipliers
    /// evaluated here keep real fields real.
    pub discrete: [f64; 3],
    /// `2π j / period` including the Nyquist component.
    pub full: [f64; 3],
    pub is_zero: bool,
    /// Nonzero frequency whose discrete wavevector vanishes (pure Nyquist mode).
    pub degenerate: bool,
}

impl Frequency {
    pub fn discrete_norm(&self) -> f64 {
        self.discrete.iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    pub fn full_norm(&self) -> f64 {
        self.full.iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    /// Largest absolute integer frequency.
    pub fn max_abs(&self) -> i64 {
        self.integer.iter().map(|j| j.abs()).max().unwrap_or(0)
    }
}

impl GridSpec {
    pub fn new(dim_n: usize, points_per_axis: usize, period: f64) -> Result<Self> {
        let g = Self {
            dim_n,
            points_per_axis,
            period,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn unit(dim_n: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(dim_n, points_per_axis, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim_n) {
            return Err(invalid(format!("grid dimension {} not in 1..=3", self.dim_n)));
        }
        let m = self.points_per_axis;
        if m < 8 || !m.is_power_of_two() {
            return Err(invalid(format!(
                "points per axis must be a power of two >= 8, got {m}"
            )));
        }
        if m.checked_pow(self.dim_n as u32).is_none_or(|t| t > MAX_POINTS) {
            return Err(invalid(format!(
                "grid {m}^{} exceeds the budget of {MAX_POINTS} points",
                self.dim_n
            )));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(invalid("period must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim_n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.points_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim_n as i32)
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim_n as i32)
    }

    /// Per-axis indices of a flat row-major index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let m = self.points_per_axis;
        let mut out = [0; 3];
        for a in (0..self.dim_n).rev() {
            out[a] = idx % m;
            idx /= m;
        }
        out
    }

    pub fn flatten(&self, ijk: &[usize]) -> usize {
        let m = self.points_per_axis;
        ijk[..self.dim_n].iter().fold(0, |acc, &i| acc * m + i)
    }

    /// Flat index after wrapping signed per-axis indices onto the torus.
    pub fn flatten_wrapped(&self, ijk: &[i64]) -> usize {
        let m = self.points_per_axis as i64;
        ijk[..self.dim_n]
            .iter()
            .fold(0, |acc, &i| acc * m as usize + i.rem_euclid(m) as usize)
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let ijk = self.unflatten(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim_n {
            x[a] = ijk[a] as f64 * h;
        }
        x
    }

    /// Signed difference `x - y` reduced to the fundamental cell `[-period/2, period/2)`.
    pub fn min_image(&self, x: &[f64], y: &[f64]) -> [f64; 3] {
        let p = self.period;
        let mut d = [0.0; 3];
        for a in 0..self.dim_n {
            let t = x[a] - y[a];
            d[a] = t - p * (t / p).round();
        }
        d
    }

    pub fn frequency(&self, idx: usize) -> Frequency {
        let m = self.points_per_axis;
        let ijk = self.unflatten(idx);
        let scale = 2.0 * std::f64::consts::PI / self.period;
        let mut f = Frequency {
            integer: [0; 3],
            discrete: [0.0; 3],
            full: [0.0; 3],
            is_zero: true,
            degenerate: false,
        };
        for a in 0..self.dim_n {
            let k = ijk[a];
            let j = if k < m / 2 { k as i64 } else { k as i64 - m as i64 };
            f.integer[a] = j;
            f.full[a] = scale * j as f64;
            f.discrete[a] = if k == m / 2 { 0.0 } else { scale * j as f64 };
            if j != 0 {
                f.is_zero = false;
            }
        }
        f.degenerate = !f.is_zero && f.discrete.iter().all(|&k| k == 0.0);
        f
    }

    pub fn with_points(&self, points_per_axis: usize) -> Result<Self> {
        Self::new(self.dim_n, points_per_axis, self.period)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(GridSpec::unit(2, 12).is_err());
        assert!(GridSpec::unit(2, 4).is_err());
        assert!(GridSpec::unit(4, 8).is_err());
        assert!(GridSpec::unit(3, 512).is_err());
        assert!(GridSpec::unit(3, 64).is_ok());
    }

    #[test]
    fn index_round_trip() {
        let g = GridSpec::unit(3, 8).unwrap();
        for idx in [0, 7, 8, 63, 64, 511] {
            assert_eq!(g.flatten(&g.unflatten(idx)), idx);
        }
        assert_eq!(g.flatten_wrapped(&[-1, 0, 8]), g.flatten(&[7, 0, 0]));
    }

    #[test]
    fn nyquist_convention() {
        let g = GridSpec::unit(2, 8).unwrap();
        let f = g.frequency(g.flatten(&[4, 0]));
        assert_eq!(f.integer[0], -4);
        assert!(f.degenerate);
        assert_eq!(f.discrete[0], 0.0);
        let f = g.frequency(g.flatten(&[4, 1]));
        assert!(!f.degenerate);
        assert!(g.frequency(0).is_zero);
    }

    #[test]
    fn min_image_wraps() {
        let g = GridSpec::unit(1, 8).unwrap();
        let d = g.min_image(&[0.9], &[0.1]);
        assert!((d[0] + 0.2).abs() < 1e-15);
    }
}
