use serde::Serialize;

use super::{GridSpec, PeriodicField};
use crate::error::{invalid, LabError, Result};

/// Subsamples per axis used to resolve cells cut by the sphere.
const SUBSAMPLES: usize = 8;

/// One grid point inside (or partly inside) a ball.
#[derive(Clone, Copy, Debug)]
pub struct MaskPoint {
    pub index: usize,
    pub weight: f64,
    /// `x - x₀` reduced to the fundamental cell.
    pub offset: [f64; 3],
}

/// Quadrature weights for `∫_{B_R(x₀)}` on the torus.
#[derive(Clone, Debug)]
pub struct BallMask {
    pub center: Vec<f64>,
    pub radius: f64,
    grid: GridSpec,
    points: Vec<MaskPoint>,
    measure: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BallInfo {
    pub center: Vec<f64>,
    pub radius: f64,
    pub radius_cells: f64,
    pub measure: f64,
    pub exact_measure: f64,
}

/// Lebesgue measure of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 / 3.0 * std::f64::consts::PI,
    }
}

impl BallMask {
    /// Ball mask requiring at least `min_cells` grid cells of radius.
    pub fn with_min_cells(grid: GridSpec, center: &[f64], radius: f64, min_cells: f64) -> Result<Self> {
        let n = grid.dim_n;
        let h = grid.spacing();
        if center.len() != n {
            return Err(invalid("ball center has the wrong dimension"));
        }
        if radius < min_cells * h * (1.0 - 1e-12) {
            return Err(LabError::RadiusTooSmall {
                radius,
                min_cells,
            });
        }
        if 2.0 * (radius + h) >= grid.period {
            return Err(invalid(format!(
                "radius {radius} does not fit in the torus of period {}",
                grid.period
            )));
        }
        let m = grid.points_per_axis as i64;
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..n {
            lo[a] = ((center[a] - radius) / h).floor() as i64 - 1;
            hi[a] = ((center[a] + radius) / h).ceil() as i64 + 1;
        }
        let half_diag = 0.5 * h * (n as f64).sqrt();
        let cell = grid.cell_volume();
        let mut points = Vec::new();
        let mut ijk = [0i64; 3];
        let count: Vec<i64> = (0..n).map(|a| hi[a] - lo[a] + 1).collect();
        let total: i64 = count.iter().product();
        for code in 0..total {
            let mut c = code;
            for a in (0..n).rev() {
                ijk[a] = lo[a] + c % count[a];
                c /= count[a];
            }
            let mut offset = [0.0; 3];
            for a in 0..n {
                offset[a] = ijk[a] as f64 * h - center[a];
            }
            let d = offset[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
            let weight = if d + half_diag <= radius {
                cell
            } else if d - half_diag >= radius {
                0.0
            } else {
                cell * inside_fraction(&offset[..n], h, radius)
            };
            if weight > 0.0 {
                debug_assert!(ijk[..n].iter().all(|&i| i > -m && i < 2 * m));
                points.push(MaskPoint {
                    index: grid.flatten_wrapped(&ijk),
                    weight,
                    offset,
                });
            }
        }
        let measure = points.iter().map(|p| p.weight).sum();
        Ok(Self {
            center: center.to_vec(),
            radius,
            grid,
            points,
            measure,
        })
    }

    /// Ball mask with the default minimum radius of four cells.
    pub fn new(grid: GridSpec, center: &[f64], radius: f64) -> Result<Self> {
        Self::with_min_cells(grid, center, radius, 4.0)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn points(&self) -> &[MaskPoint] {
        &self.points
    }

    /// `Σ weights`, the discrete measure of the ball.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn exact_measure(&self) -> f64 {
        unit_ball_volume(self.grid.dim_n) * self.radius.powi(self.grid.dim_n as i32)
    }

    pub fn info(&self) -> BallInfo {
        BallInfo {
            center: self.center.clone(),
            radius: self.radius,
            radius_cells: self.radius / self.grid.spacing(),
            measure: self.measure,
            exact_measure: self.exact_measure(),
        }
    }

    /// Concentric mask with radius scaled by `theta`, same minimum-cell rule.
    pub fn shrink(&self, theta: f64, min_cells: f64) -> Result<Self> {
        Self::with_min_cells(self.grid, &self.center, theta * self.radius, min_cells)
    }

    fn check(&self, f: &PeriodicField) {
        assert_eq!(f.grid(), &self.grid, "mask and field live on different grids");
    }

    /// `∫_{B_R} φ(f(x)) dx`.
    pub fn integral<F>(&self, f: &PeriodicField, phi: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        self.check(f);
        self.points
            .iter()
            .map(|p| p.weight * phi(f.at(p.index)))
            .sum()
    }

    /// `⨏_{B_R} φ(f(x)) dx`.
    pub fn mean_of<F>(&self, f: &PeriodicField, phi: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        self.integral(f, phi) / self.measure
    }

    /// Componentwise average `(f)_{x₀,R}`.
    pub fn average(&self, f: &PeriodicField) -> Vec<f64> {
        self.check(f);
        let mut acc = vec![0.0; f.fiber_dim()];
        for p in &self.points {
            for (a, v) in acc.iter_mut().zip(f.at(p.index)) {
                *a += p.weight * v;
            }
        }
        acc.iter().map(|a| a / self.measure).collect()
    }
}

/// Fraction of the cell centered at `offset` (side `h`) lying inside the ball of radius `r`.
fn inside_fraction(offset: &[f64], h: f64, r: f64) -> f64 {
    let n = offset.len();
    let s = SUBSAMPLES;
    let total = s.pow(n as u32);
    let mut inside = 0usize;
    for code in 0..total {
        let mut c = code;
        let mut d2 = 0.0;
        for o in offset.iter() {
            let k = c % s;
            c /= s;
            let y = o + h * ((k as f64 + 0.5) / s as f64 - 0.5);
            d2 += y * y;
        }
        if d2 <= r * r {
            inside += 1;
        }
    }
    inside as f64 / total as f64
}

/// `Σ weights · φ(f(x))` over the mask.
pub fn ball_integral<F>(f: &PeriodicField, mask: &BallMask, phi: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    mask.integral(f, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_close_to_ball_volume() {
        for (n, m) in [(2, 64), (3, 32)] {
            let g = GridSpec::unit(n, m).unwrap();
            let c = vec![0.37; n];
            let mask = BallMask::with_min_cells(g, &c, 8.0 / m as f64, 8.0).unwrap();
            let rel = (mask.measure() / mask.exact_measure() - 1.0).abs();
            assert!(rel < 0.02, "n={n}: {rel}");
        }
    }

    #[test]
    fn wraps_across_the_boundary() {
        let g = GridSpec::unit(2, 64).unwrap();
        let a = BallMask::new(g, &[0.0, 0.0], 0.2).unwrap();
        let b = BallMask::new(g, &[0.5, 0.5], 0.2).unwrap();
        assert!((a.measure() - b.measure()).abs() < 1e-12);
    }

    #[test]
    fn radius_limits() {
        let g = GridSpec::unit(2, 64).unwrap();
        assert!(matches!(
            BallMask::new(g, &[0.5, 0.5], 2.0 / 64.0),
            Err(LabError::RadiusTooSmall { .. })
        ));
        assert!(BallMask::new(g, &[0.5, 0.5], 0.6).is_err());
    }

    #[test]
    fn average_of_linear_field_is_center_value() {
        let g = GridSpec::unit(2, 64).unwrap();
        let x0 = [0.5, 0.5];
        let f = PeriodicField::from_fn(g, 1, |x, o| o[0] = 3.0 * x[0] - x[1]);
        let mask = BallMask::new(g, &x0, 0.2).unwrap();
        let avg = mask.average(&f)[0];
        assert!((avg - 1.0).abs() < 1.0 / 64.0);
    }
}
