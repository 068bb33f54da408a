use serde::Serialize;

use crate::spectral::{BallMask, PeriodicField};
use crate::util;

/// `E(z) = sqrt(1 + |z|^2) - 1`, evaluated without cancellation near zero.
pub fn eval_e(z: &[f64]) -> f64 {
    let s2: f64 = z.iter().map(|x| x * x).sum();
    e_of_sq(s2)
}

/// `E` as a function of `|z|^2`.
pub fn e_of_sq(s2: f64) -> f64 {
    s2 / ((1.0 + s2).sqrt() + 1.0)
}

/// `E` as a function of `|z|`.
pub fn e_of_norm(s: f64) -> f64 {
    e_of_sq(s * s)
}

pub fn grad_e(z: &[f64], out: &mut [f64]) {
    let r = (1.0 + z.iter().map(|x| x * x).sum::<f64>()).sqrt();
    for (o, x) in out.iter_mut().zip(z) {
        *o = x / r;
    }
}

/// Row-major Hessian `(I - z z^T / (1+|z|^2)) / sqrt(1+|z|^2)`.
pub fn hess_e(z: &[f64], out: &mut [f64]) {
    let d = z.len();
    let q = 1.0 + z.iter().map(|x| x * x).sum::<f64>();
    let r = q.sqrt();
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            out[i * d + j] = (id - z[i] * z[j] / q) / r;
        }
    }
}

/// `V_p(z) = (1 + |z|^2)^{(p-2)/4} z`.
pub fn eval_vp(z: &[f64], p: f64) -> Vec<f64> {
    let s2: f64 = z.iter().map(|x| x * x).sum();
    let w = (1.0 + s2).powf((p - 2.0) / 4.0);
    z.iter().map(|x| w * x).collect()
}

/// `|V_p(z)|^2` as a function of `|z|^2`.
pub fn vp_sq_of_sq(s2: f64, p: f64) -> f64 {
    (1.0 + s2).powf((p - 2.0) / 2.0) * s2
}

/// Range of `E(z) / min{|z|, |z|^2}` over `count` log-spaced radii in `[lo, hi]`.
pub fn e_equivalence_scan(lo: f64, hi: f64, count: usize) -> (f64, f64) {
    let (a, b) = (lo.ln(), hi.ln());
    let mut min = f64::INFINITY;
    let mut max = 0.0f64;
    for i in 0..count {
        let s = (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp();
        let r = e_of_norm(s) / s.min(s * s);
        min = min.min(r);
        max = max.max(r);
    }
    (min, max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModularBound {
    /// `⨏ |f|`
    pub lhs: f64,
    /// `sqrt(e^2 + 2e)` with `e = ⨏ E(f)`
    pub rhs: f64,
    pub e: f64,
    /// `sqrt(3e)`, only meaningful when `e <= 1`.
    pub small_energy_bound: Option<f64>,
}

/// Compares `⨏_B |f|` with `sqrt(e^2 + 2e)`, `e = ⨏_B E(f)`.
pub fn modular_mean_bound(f: &PeriodicField, mask: &BallMask) -> ModularBound {
    let lhs = mask.mean_of(f, util::norm);
    let e = mask.mean_of(f, eval_e);
    ModularBound {
        lhs,
        rhs: (e * e + 2.0 * e).sqrt(),
        e,
        small_energy_bound: (e <= 1.0).then(|| (3.0 * e).sqrt()),
    }
}
