use std::f64::consts::{E as EULER, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::reference::{eval_e, grad_e, hess_e};
use crate::error::{invalid, Result};
use crate::util;

/// Smooth periodic vector field `S(x) = Σ_t a_t cos(2π k_t·x / P + φ_t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigField {
    pub period: f64,
    pub terms: Vec<TrigTerm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigTerm {
    pub wave: Vec<i64>,
    pub amplitude: Vec<f64>,
    pub phase: f64,
}

impl TrigField {
    /// Seeded field with `n_terms` modes of integer frequency at most `band`,
    /// scaled so that the sup-norm bound `Σ|a_t|` equals `amplitude`.
    pub fn random(dim_n: usize, fiber: usize, n_terms: usize, band: i64, amplitude: f64, seed: u64) -> Self {
        let mut rng = util::rng(seed);
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let wave: Vec<i64> = loop {
                let w: Vec<i64> = (0..dim_n).map(|_| rng.random_range(-band..=band)).collect();
                if w.iter().any(|&k| k != 0) {
                    break w;
                }
            };
            terms.push(TrigTerm {
                wave,
                amplitude: util::gaussian_vec(&mut rng, fiber),
                phase: rng.random_range(0.0..2.0 * PI),
            });
        }
        let total: f64 = terms.iter().map(|t| util::norm(&t.amplitude)).sum();
        if total > 0.0 {
            for t in &mut terms {
                t.amplitude.iter_mut().for_each(|a| *a *= amplitude / total);
            }
        }
        Self { period: 1.0, terms }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let arg = 2.0 * PI * util::dot(&t.wave.iter().map(|&k| k as f64).collect::<Vec<_>>(), x)
                / self.period
                + t.phase;
            let c = arg.cos();
            for (o, a) in out.iter_mut().zip(&t.amplitude) {
                *o += a * c;
            }
        }
    }

    /// Upper bound `Σ_t |a_t|` for `sup |S|`.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| util::norm(&t.amplitude)).sum()
    }

    /// Upper bound for the Lipschitz constant of `S`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k = util::norm(&t.wave.iter().map(|&k| k as f64).collect::<Vec<_>>());
                2.0 * PI * k / self.period * util::norm(&t.amplitude)
            })
            .sum()
    }
}

/// Closed-form integrand families.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `ℓ E(z)`
    ScaledE { ell: f64 },
    /// `ℓ E(z) + μ ½ z^T Q z exp(-|z|²/ρ²)`
    Perturbed {
        ell: f64,
        mu: f64,
        rho: f64,
        q: Vec<f64>,
    },
    /// `ℓ (1 + amplitude s(x)) E(z)` with `s(x) = (1/n) Σ_a (1 + cos(2π x_a / P)) / 2 ∈ [0, 1]`.
    Weighted { ell: f64, amplitude: f64, period: f64 },
    /// `c |z|² / 2`
    Quadratic { c: f64 },
    /// `<ζ, z>`
    Linear { zeta: Vec<f64> },
}

/// `f(x, z)` with closed-form first and second `z`-derivatives.
#[derive(Clone, Debug, Serialize)]
pub struct Integrand {
    pub family: Family,
    pub offset: Option<TrigField>,
    pub fiber_dim: usize,
}

fn weight(x: &[f64], amplitude: f64, period: f64) -> f64 {
    let n = x.len().max(1) as f64;
    let s: f64 = x
        .iter()
        .map(|xa| 0.5 * (1.0 + (2.0 * PI * xa / period).cos()))
        .sum::<f64>()
        / n;
    1.0 + amplitude * s
}

impl Integrand {
    pub fn scaled_e(ell: f64, fiber_dim: usize) -> Self {
        Self {
            family: Family::ScaledE { ell },
            offset: None,
            fiber_dim,
        }
    }

    pub fn quadratic(c: f64, fiber_dim: usize) -> Self {
        Self {
            family: Family::Quadratic { c },
            offset: None,
            fiber_dim,
        }
    }

    pub fn linear(zeta: Vec<f64>) -> Self {
        let fiber_dim = zeta.len();
        Self {
            family: Family::Linear { zeta },
            offset: None,
            fiber_dim,
        }
    }

    /// Perturbed family with a seeded symmetric `Q` whose eigenvalues lie in `[-1, 1]`.
    pub fn perturbed(ell: f64, mu: f64, rho: f64, fiber_dim: usize, seed: u64) -> Self {
        let mut rng = util::rng(seed);
        let g = DMatrix::from_vec(fiber_dim, fiber_dim, util::gaussian_vec(&mut rng, fiber_dim * fiber_dim));
        let sym = (&g + g.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let smax = eig.eigenvalues.amax().max(1e-12);
        let q = eig.recompose() / smax;
        Self {
            family: Family::Perturbed {
                ell,
                mu,
                rho,
                q: q.transpose().as_slice().to_vec(),
            },
            offset: None,
            fiber_dim,
        }
    }

    pub fn weighted(ell: f64, amplitude: f64, period: f64, fiber_dim: usize) -> Self {
        Self {
            family: Family::Weighted {
                ell,
                amplitude,
                period,
            },
            offset: None,
            fiber_dim,
        }
    }

    /// `g(x, z) = f(x, S(x) + z)`.
    pub fn with_offset(mut self, offset: TrigField) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn name(&self) -> &'static str {
        match (&self.family, self.offset.is_some()) {
            (_, true) => "offset",
            (Family::ScaledE { .. }, _) => "ellE",
            (Family::Perturbed { .. }, _) => "perturbed",
            (Family::Weighted { .. }, _) => "xdep",
            (Family::Quadratic { .. }, _) => "quadratic",
            (Family::Linear { .. }, _) => "linear",
        }
    }

    /// Whether `f` depends on `x`.
    pub fn is_autonomous(&self) -> bool {
        self.offset.is_none() && !matches!(self.family, Family::Weighted { .. })
    }

    fn shifted_arg<'a>(&self, x: &[f64], z: &'a [f64], buf: &'a mut Vec<f64>) -> &'a [f64] {
        match &self.offset {
            None => z,
            Some(s) => {
                buf.resize(z.len(), 0.0);
                s.eval(x, buf);
                for (b, zi) in buf.iter_mut().zip(z) {
                    *b += zi;
                }
                buf
            }
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let z = self.shifted_arg(x, z, &mut buf);
        match &self.family {
            Family::ScaledE { ell } => ell * eval_e(z),
            Family::Perturbed { ell, mu, rho, q } => {
                let d = z.len();
                let s2: f64 = z.iter().map(|v| v * v).sum();
                let phi = 0.5 * quad(q, z, d);
                ell * eval_e(z) + mu * phi * (-s2 / (rho * rho)).exp()
            }
            Family::Weighted {
                ell,
                amplitude,
                period,
            } => ell * weight(x, *amplitude, *period) * eval_e(z),
            Family::Quadratic { c } => 0.5 * c * z.iter().map(|v| v * v).sum::<f64>(),
            Family::Linear { zeta } => util::dot(zeta, z),
        }
    }

    pub fn grad(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let mut buf = Vec::new();
        let z = self.shifted_arg(x, z, &mut buf);
        let d = z.len();
        match &self.family {
            Family::ScaledE { ell } => {
                grad_e(z, out);
                out.iter_mut().for_each(|o| *o *= ell);
            }
            Family::Perturbed { ell, mu, rho, q } => {
                grad_e(z, out);
                let s2: f64 = z.iter().map(|v| v * v).sum();
                let e = (-s2 / (rho * rho)).exp();
                let phi = 0.5 * quad(q, z, d);
                for i in 0..d {
                    let qz: f64 = (0..d).map(|j| q[i * d + j] * z[j]).sum();
                    out[i] = ell * out[i] + mu * e * (qz - 2.0 * phi / (rho * rho) * z[i]);
                }
            }
            Family::Weighted {
                ell,
                amplitude,
                period,
            } => {
                grad_e(z, out);
                let a = ell * weight(x, *amplitude, *period);
                out.iter_mut().for_each(|o| *o *= a);
            }
            Family::Quadratic { c } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = c * v;
                }
            }
            Family::Linear { zeta } => out.copy_from_slice(zeta),
        }
    }

    /// Row-major `d × d` Hessian in `z`.
    pub fn hess(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let mut buf = Vec::new();
        let z = self.shifted_arg(x, z, &mut buf);
        let d = z.len();
        match &self.family {
            Family::ScaledE { ell } => {
                hess_e(z, out);
                out.iter_mut().for_each(|o| *o *= ell);
            }
            Family::Perturbed { ell, mu, rho, q } => {
                hess_e(z, out);
                let r2 = rho * rho;
                let s2: f64 = z.iter().map(|v| v * v).sum();
                let e = (-s2 / r2).exp();
                let phi = 0.5 * quad(q, z, d);
                let qz: Vec<f64> = (0..d)
                    .map(|i| (0..d).map(|j| q[i * d + j] * z[j]).sum())
                    .collect();
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        let g = q[i * d + j] - 2.0 / r2 * (qz[i] * z[j] + z[i] * qz[j])
                            + phi * (-2.0 * id / r2 + 4.0 * z[i] * z[j] / (r2 * r2));
                        out[i * d + j] = ell * out[i * d + j] + mu * e * g;
                    }
                }
            }
            Family::Weighted {
                ell,
                amplitude,
                period,
            } => {
                hess_e(z, out);
                let a = ell * weight(x, *amplitude, *period);
                out.iter_mut().for_each(|o| *o *= a);
            }
            Family::Quadratic { c } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = *c;
                }
            }
            Family::Linear { .. } => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    /// Growth constant `L` with `|f(x, z)| <= L (1 + |z|)`; `None` for superlinear families.
    pub fn growth_constant(&self) -> Option<f64> {
        let base = match &self.family {
            Family::ScaledE { ell } => ell.abs(),
            Family::Perturbed { ell, mu, rho, q } => {
                ell.abs() + mu.abs() * op_norm(q, self.fiber_dim) * rho * rho / (2.0 * EULER)
            }
            Family::Weighted { ell, amplitude, .. } => ell.abs() * (1.0 + amplitude.abs()),
            Family::Quadratic { .. } => return None,
            Family::Linear { zeta } => util::norm(zeta),
        };
        let s = self.offset.as_ref().map_or(0.0, TrigField::sup_bound);
        Some(base * (1.0 + s))
    }

    /// Nominal strong quasiconvexity modulus `ℓ` (zero when none applies).
    pub fn ell(&self) -> f64 {
        match &self.family {
            Family::ScaledE { ell } | Family::Perturbed { ell, .. } | Family::Weighted { ell, .. } => {
                ell.max(0.0)
            }
            Family::Quadratic { .. } | Family::Linear { .. } => 0.0,
        }
    }

    /// Bound for `|∂_z f(x, z) - ∂_z f(y, z)| / |x - y|`.
    pub fn lipschitz_x(&self) -> f64 {
        let from_weight = match &self.family {
            Family::Weighted {
                ell,
                amplitude,
                period,
            } => ell.abs() * amplitude.abs() * PI / period,
            _ => 0.0,
        };
        let from_offset = self.offset.as_ref().map_or(0.0, |s| {
            let lip_grad = match &self.family {
                Family::ScaledE { ell } => ell.abs(),
                Family::Weighted { ell, amplitude, .. } => ell.abs() * (1.0 + amplitude.abs()),
                Family::Perturbed { ell, mu, q, .. } => ell.abs() + 3.0 * mu.abs() * op_norm(q, self.fiber_dim),
                Family::Quadratic { c } => c.abs(),
                Family::Linear { .. } => 0.0,
            };
            lip_grad * s.lipschitz_bound()
        });
        from_weight + from_offset
    }
}

fn quad(q: &[f64], z: &[f64], d: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += z[i] * q[i * d + j] * z[j];
        }
    }
    acc
}

fn op_norm(q: &[f64], d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    SymmetricEigen::new(DMatrix::from_row_slice(d, d, q))
        .eigenvalues
        .amax()
}

/// Offset specification inside an integrand config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffsetConfig {
    #[serde(default = "default_offset_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default = "default_band")]
    pub band: i64,
    #[serde(default)]
    pub seed: u64,
}

fn default_offset_amplitude() -> f64 {
    0.5
}
fn default_terms() -> usize {
    3
}
fn default_band() -> i64 {
    2
}
fn default_ell() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    0.1
}
fn default_rho() -> f64 {
    1.0
}
fn default_family() -> String {
    "ellE".into()
}

/// JSON integrand configuration, e.g. `{"family":"perturbed","ell":1,"mu":0.1,"seed":3}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandConfig {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub zeta: Option<Vec<f64>>,
    #[serde(default)]
    pub base: Option<String>,
    #[serde(default)]
    pub offset: Option<OffsetConfig>,
}

impl Default for IntegrandConfig {
    fn default() -> Self {
        Self {
            family: default_family(),
            ell: 1.0,
            mu: default_mu(),
            rho: 1.0,
            amplitude: None,
            seed: 0,
            zeta: None,
            base: None,
            offset: None,
        }
    }
}

impl IntegrandConfig {
    pub fn build(&self, fiber_dim: usize, dim_n: usize, period: f64) -> Result<Integrand> {
        let family = match (self.family.as_str(), &self.base) {
            ("offset", Some(b)) => b.as_str(),
            ("offset", None) => "ellE",
            (f, _) => f,
        };
        let mut f = match family {
            "ellE" | "E" | "scaled" => Integrand::scaled_e(self.ell, fiber_dim),
            "perturbed" => Integrand::perturbed(self.ell, self.mu, self.rho, fiber_dim, self.seed),
            "xdep" | "weighted" => {
                Integrand::weighted(self.ell, self.amplitude.unwrap_or(0.5), period, fiber_dim)
            }
            "quadratic" => Integrand::quadratic(self.ell, fiber_dim),
            "linear" => {
                let zeta = self
                    .zeta
                    .clone()
                    .ok_or_else(|| invalid("linear integrand needs zeta"))?;
                if zeta.len() != fiber_dim {
                    return Err(invalid("zeta has the wrong dimension"));
                }
                Integrand::linear(zeta)
            }
            other => return Err(invalid(format!("unknown integrand family '{other}'"))),
        };
        if self.family == "offset" || self.offset.is_some() {
            let oc = self.offset.clone().unwrap_or(OffsetConfig {
                amplitude: default_offset_amplitude(),
                terms: default_terms(),
                band: default_band(),
                seed: self.seed,
            });
            let mut s = TrigField::random(dim_n, fiber_dim, oc.terms, oc.band, oc.amplitude, oc.seed);
            s.period = period;
            f = f.with_offset(s);
        }
        Ok(f)
    }
}
