use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::reference::e_of_norm;
use super::{eval_e, Integrand};
use crate::error::{invalid, Result};
use crate::spectral::{GridSpec, PeriodicField, SpectralOperator};
use crate::symbol::{DiffOperator, WaveCone};
use crate::util;

/// Second-order Taylor remainder `f_w(z) = f(x₀, z+w) - f(x₀, w) - ∂f(x₀, w)·z`.
#[derive(Clone, Debug)]
pub struct ShiftedIntegrand {
    pub base: Integrand,
    pub x0: Vec<f64>,
    pub w: Vec<f64>,
    f_w: f64,
    grad_w: Vec<f64>,
}

impl ShiftedIntegrand {
    pub fn new(base: Integrand, x0: Vec<f64>, w: Vec<f64>) -> Self {
        let f_w = base.eval(&x0, &w);
        let mut grad_w = vec![0.0; w.len()];
        base.grad(&x0, &w, &mut grad_w);
        Self {
            base,
            x0,
            w,
            f_w,
            grad_w,
        }
    }

    fn arg(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.w).map(|(a, b)| a + b).collect()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.base.eval(&self.x0, &self.arg(z)) - self.f_w - util::dot(&self.grad_w, z)
    }

    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        self.base.grad(&self.x0, &self.arg(z), out);
        for (o, g) in out.iter_mut().zip(&self.grad_w) {
            *o -= g;
        }
    }

    pub fn hess(&self, z: &[f64], out: &mut [f64]) {
        self.base.hess(&self.x0, &self.arg(z), out);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    /// Measured `sup |f_w(z)| / E(z)` over the probe set.
    pub c1: f64,
    pub w_norm: f64,
    pub probes: usize,
}

/// Builds `f_w` and measures the constant in `|f_w(z)| <= c₁ E(z)` on a log grid of
/// radii in `[1e-6, 1e3]` along seeded directions.
pub fn make_shifted(
    f: &Integrand,
    x0: &[f64],
    w: &[f64],
    max_shift: f64,
) -> Result<(ShiftedIntegrand, ShiftReport)> {
    let w_norm = util::norm(w);
    if w_norm > max_shift {
        return Err(invalid(format!("|w| = {w_norm} exceeds the bound {max_shift}")));
    }
    if w.len() != f.fiber_dim {
        return Err(invalid("shift has the wrong dimension"));
    }
    let s = ShiftedIntegrand::new(f.clone(), x0.to_vec(), w.to_vec());
    let mut rng = util::rng(0x5417);
    let dirs: Vec<Vec<f64>> = (0..24).map(|_| util::unit_vec(&mut rng, w.len())).collect();
    let radii: Vec<f64> = (0..=90).map(|i| 10f64.powf(-6.0 + i as f64 / 10.0)).collect();
    let mut c1 = 0.0f64;
    for d in &dirs {
        for &r in &radii {
            let z: Vec<f64> = d.iter().map(|v| v * r).collect();
            c1 = c1.max(s.eval(&z).abs() / eval_e(&z));
        }
    }
    Ok((
        s,
        ShiftReport {
            c1,
            w_norm,
            probes: dirs.len() * radii.len(),
        },
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    /// Minimum of `∂²f(x, z)[v, v]` over sampled unit `v` in the wave cone.
    pub worst: f64,
    pub direction: Vec<f64>,
    /// Set when the worst quotient is not positive (up to `1e-12`).
    pub degenerate: bool,
    /// `ℓ (1+|z|²)^{-3/2}`, the quotient of `ℓE` along `z`.
    pub floor: f64,
}

/// Smallest Rayleigh quotient of the Hessian over the sampled wave cone.
pub fn check_wave_cone_ellipticity(f: &Integrand, x: &[f64], z: &[f64], cone: &WaveCone) -> EllipticityReport {
    let d = z.len();
    let mut h = vec![0.0; d * d];
    f.hess(x, z, &mut h);
    let hm = DMatrix::from_row_slice(d, d, &h);
    let mut worst = f64::INFINITY;
    let mut direction = vec![0.0; d];
    for s in &cone.samples {
        if s.basis.is_empty() {
            continue;
        }
        let k = DMatrix::from_fn(d, s.basis.len(), |i, j| s.basis[j][i]);
        let restricted = k.transpose() * &hm * &k;
        let sym = (&restricted + restricted.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let (imin, &lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty kernel");
        if lmin < worst {
            worst = lmin;
            let v = &k * eig.eigenvectors.column(imin);
            direction = v.iter().cloned().collect();
        }
    }
    if !worst.is_finite() {
        worst = 0.0;
    }
    let z2: f64 = z.iter().map(|v| v * v).sum();
    EllipticityReport {
        worst,
        direction,
        degenerate: worst <= 1e-12,
        floor: f.ell() * (1.0 + z2).powf(-1.5),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasiconvexityProbe {
    /// Minimum over nontrivial test fields of `⨏ f(x₀, z + Bφ) - f(x₀, z)`.
    pub margin: f64,
    pub worst_amplitude: f64,
    pub worst_band: usize,
    pub trials: usize,
}

const AMPLITUDES: [f64; 3] = [0.1, 1.0, 10.0];

/// Jensen-gap sampler for quasiconvexity with respect to `B`-gradients, using
/// band-limited periodic potentials at three amplitude scales each.
pub fn quasiconvexity_probe(
    f: &Integrand,
    op_b: &DiffOperator,
    x0: &[f64],
    z: &[f64],
    trials: usize,
    grid: GridSpec,
    seed: u64,
) -> Result<QuasiconvexityProbe> {
    if trials < 100 {
        return Err(invalid("quasiconvexity probe needs at least 100 trials"));
    }
    if z.len() != op_b.dim_to() || z.iter().any(|v| !v.is_finite()) {
        return Err(invalid("probe point must be a finite vector in the target space"));
    }
    let b = SpectralOperator::new(op_b);
    let base = f.eval(x0, z);
    let fields = trials.div_ceil(AMPLITUDES.len());
    let results: Vec<(f64, f64, usize)> = (0..fields)
        .into_par_iter()
        .flat_map_iter(|t| {
            let band = [1usize, 2, 4][t % 3];
            let phi = PeriodicField::random_band_limited(grid, op_b.dim_from(), band, util::sub_seed(seed, t as u64));
            let bphi = b.apply(&phi).expect("shapes agree");
            let rms = (bphi.inner(&bphi) / grid.volume()).sqrt();
            let n = grid.len();
            AMPLITUDES
                .iter()
                .map(|&a| {
                    let s = if rms > 0.0 { a / rms } else { 0.0 };
                    let mean = util::det_sum(n, |i| {
                        let v: Vec<f64> = z.iter().zip(bphi.at(i)).map(|(zz, p)| zz + s * p).collect();
                        f.eval(x0, &v)
                    }) / n as f64;
                    (mean - base, a, band)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let worst = results
        .iter()
        .take(trials)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one trial");
    Ok(QuasiconvexityProbe {
        margin: worst.0,
        worst_amplitude: worst.1,
        worst_band: worst.2,
        trials: trials.min(results.len()),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RecessionReport {
    pub value: f64,
    pub ladder: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Relative gap between the last two estimates.
    pub cauchy_gap: f64,
    pub non_cauchy: bool,
}

pub fn default_ladder() -> Vec<f64> {
    (0..=8).map(|k| 10f64.powi(k)).collect()
}

/// `f(x, t z) / t` along an increasing ladder ending at `t >= 1e6`.
pub fn recession(f: &Integrand, x: &[f64], z: &[f64], ladder: &[f64]) -> Result<RecessionReport> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("ladder must be strictly increasing"));
    }
    if *ladder.last().expect("nonempty") < 1e6 {
        return Err(invalid("ladder must reach t >= 1e6"));
    }
    let estimates: Vec<f64> = ladder
        .iter()
        .map(|&t| {
            let tz: Vec<f64> = z.iter().map(|v| v * t).collect();
            f.eval(x, &tz) / t
        })
        .collect();
    let value = *estimates.last().expect("nonempty");
    let cauchy_gap = if estimates.len() >= 2 {
        let prev = estimates[estimates.len() - 2];
        (value - prev).abs() / value.abs().max(prev.abs()).max(1e-300)
    } else {
        0.0
    };
    Ok(RecessionReport {
        value,
        ladder: ladder.to_vec(),
        estimates,
        cauchy_gap,
        non_cauchy: cauchy_gap > 1e-4,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub max_grad_error: f64,
    pub max_hess_error: f64,
    pub probes: usize,
    pub step: f64,
}

pub const FD_STEP: f64 = 1e-5;

/// Compares closed-form derivatives with central differences at seeded probes.
/// Errors are relative to `max(|exact|, 1)`.
pub fn check_derivatives(f: &Integrand, dim_n: usize, probes: usize, seed: u64) -> DerivativeReport {
    let d = f.fiber_dim;
    let h = FD_STEP;
    let mut rng = util::rng(seed);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..probes)
        .map(|i| {
            let x: Vec<f64> = (0..dim_n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
            let scale = 10f64.powf(-1.0 + 3.0 * (i as f64 / probes.max(1) as f64));
            let z: Vec<f64> = util::gaussian_vec(&mut rng, d).iter().map(|v| v * scale).collect();
            (x, z)
        })
        .collect();
    let mut max_grad_error = 0.0f64;
    let mut max_hess_error = 0.0f64;
    let mut g = vec![0.0; d];
    let mut hs = vec![0.0; d * d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for (x, z) in &points {
        f.grad(x, z, &mut g);
        f.hess(x, z, &mut hs);
        let mut zp = z.clone();
        let mut fd = vec![0.0; d];
        let mut fdh = vec![0.0; d * d];
        for j in 0..d {
            zp[j] = z[j] + h;
            let fp = f.eval(x, &zp);
            f.grad(x, &zp, &mut gp);
            zp[j] = z[j] - h;
            let fm = f.eval(x, &zp);
            f.grad(x, &zp, &mut gm);
            zp[j] = z[j];
            fd[j] = (fp - fm) / (2.0 * h);
            for i in 0..d {
                fdh[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let ge: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        max_grad_error = max_grad_error.max(util::norm(&ge) / util::norm(&g).max(1.0));
        let he: Vec<f64> = hs.iter().zip(&fdh).map(|(a, b)| a - b).collect();
        max_hess_error = max_hess_error.max(util::norm(&he) / util::norm(&hs).max(1.0));
    }
    DerivativeReport {
        max_grad_error,
        max_hess_error,
        probes,
        step: h,
    }
}

/// Measured `sup |f(x, z)| / (1 + |z|)` over seeded probes with `|z|` up to `1e4`.
pub fn measure_growth(f: &Integrand, dim_n: usize, probes: usize, seed: u64) -> f64 {
    let mut rng = util::rng(seed);
    let mut worst = 0.0f64;
    for i in 0..probes {
        let x: Vec<f64> = (0..dim_n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let r = 10f64.powf(-3.0 + 7.0 * i as f64 / probes.max(1) as f64);
        let z: Vec<f64> = util::unit_vec(&mut rng, f.fiber_dim).iter().map(|v| v * r).collect();
        worst = worst.max(f.eval(&x, &z).abs() / (1.0 + r));
    }
    worst
}

/// Empirical modulus of continuity of `∂²_z f`: largest Hessian change over seeded
/// pairs at distance `delta`, relative to `ℓ` (or 1).
pub fn probe_hessian_modulus(f: &Integrand, delta: f64, probes: usize, seed: u64) -> f64 {
    let d = f.fiber_dim;
    let mut rng = util::rng(seed);
    let x = vec![0.0; 3];
    let mut h1 = vec![0.0; d * d];
    let mut h2 = vec![0.0; d * d];
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let z = util::gaussian_vec(&mut rng, d);
        let dir = util::unit_vec(&mut rng, d);
        let z2: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + delta * b).collect();
        f.hess(&x, &z, &mut h1);
        f.hess(&x, &z2, &mut h2);
        let diff: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a - b).collect();
        worst = worst.max(util::norm(&diff));
    }
    worst / f.ell().max(1.0)
}

/// Measured constants of the E-calculus over `count` seeded pairs:
/// `E(z+w) <= c_sum (E(z)+E(w))` and `E(tz) <= c_scale max{t, t²} E(z)`.
pub fn e_calculus_constants(dim: usize, count: usize, seed: u64) -> (f64, f64) {
    let mut rng = util::rng(seed);
    let mut c_sum = 0.0f64;
    let mut c_scale = 0.0f64;
    for _ in 0..count {
        let rz = 10f64.powf(rand::Rng::random_range(&mut rng, -4.0..4.0));
        let rw = 10f64.powf(rand::Rng::random_range(&mut rng, -4.0..4.0));
        let z: Vec<f64> = util::unit_vec(&mut rng, dim).iter().map(|v| v * rz).collect();
        let w: Vec<f64> = util::unit_vec(&mut rng, dim).iter().map(|v| v * rw).collect();
        let zw: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a + b).collect();
        c_sum = c_sum.max(eval_e(&zw) / (eval_e(&z) + eval_e(&w)));
        let t = 10f64.powf(rand::Rng::random_range(&mut rng, -4.0..4.0));
        c_scale = c_scale.max(e_of_norm(t * rz) / (t.max(t * t) * e_of_norm(rz)));
    }
    (c_sum, c_scale)
}
