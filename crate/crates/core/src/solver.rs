//! Projected gradient descent for integral functionals over constrained periodic fields.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::integrands::Integrand;
use crate::spectral::{BallMask, GridSpec, PeriodicField, SpectralProjector};
use crate::symbol::DiffOperator;
use crate::util::det_sum;

/// Admissible fields: `A`-free with prescribed mean, or `F + B u`.
#[derive(Clone, Debug)]
pub enum Constraint {
    AFree { op: DiffOperator, mean: Vec<f64> },
    Potential { op: DiffOperator, datum: Vec<f64> },
}

impl Constraint {
    pub fn fiber_dim(&self) -> usize {
        match self {
            Constraint::AFree { op, .. } => op.dim_from(),
            Constraint::Potential { op, .. } => op.dim_to(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            Constraint::AFree { mean, .. } => mean,
            Constraint::Potential { datum, .. } => datum,
        }
    }

    pub fn operator(&self) -> &DiffOperator {
        match self {
            Constraint::AFree { op, .. } | Constraint::Potential { op, .. } => op,
        }
    }
}

/// Orthogonal projection onto the zero-mean directions of the admissible set.
#[derive(Clone, Debug)]
pub struct FeasibleSet {
    projector: SpectralProjector,
    mean: Vec<f64>,
}

impl FeasibleSet {
    pub fn new(constraint: &Constraint) -> Result<Self> {
        let projector = match constraint {
            Constraint::AFree { op, .. } => SpectralProjector::kernel_of(op)?,
            Constraint::Potential { op, .. } => SpectralProjector::range_of(op)?,
        };
        if constraint.mean().len() != projector.dim() {
            return Err(LabError::ShapeMismatch {
                expected: projector.dim(),
                got: constraint.mean().len(),
            });
        }
        Ok(Self {
            projector,
            mean: constraint.mean().to_vec(),
        })
    }

    /// Zero-mean part of the projection.
    pub fn project_tangent(&self, f: &PeriodicField) -> PeriodicField {
        // removing the mean first keeps constant inputs exactly at zero
        let neg: Vec<f64> = f.mean().iter().map(|m| -m).collect();
        self.projector
            .apply_with(&f.shift(&neg), false)
            .expect("fiber checked at construction")
    }

    /// Nearest admissible field.
    pub fn project(&self, f: &PeriodicField) -> PeriodicField {
        self.project_tangent(f).shift(&self.mean)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zero,
    Random {
        seed: u64,
        #[serde(default = "default_init_amplitude")]
        amplitude: f64,
        #[serde(default = "default_init_band")]
        band: usize,
    },
    #[serde(skip)]
    Field(PeriodicField),
}

fn default_init_amplitude() -> f64 {
    0.5
}
fn default_init_band() -> usize {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub reproject_every: usize,
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            reproject_every: 50,
            record_history: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeProblem {
    pub integrand: Integrand,
    pub constraint: Constraint,
    pub grid: GridSpec,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HistoryEntry {
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizerResult {
    pub field: PeriodicField,
    pub energy: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
    /// `‖v - Π v‖∞` for the final field.
    pub constraint_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizerSummary {
    pub energy: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraint_residual: f64,
    pub mean: Vec<f64>,
    pub oscillation: f64,
    pub history: Vec<HistoryEntry>,
}

impl MinimizerResult {
    pub fn summary(&self) -> MinimizerSummary {
        let mean = self.field.mean();
        let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
        MinimizerSummary {
            energy: self.energy,
            el_residual: self.el_residual,
            iterations: self.iterations,
            converged: self.converged,
            constraint_residual: self.constraint_residual,
            oscillation: self.field.shift(&neg).sup_norm(),
            mean,
            history: self.history.clone(),
        }
    }
}

/// `∫ f(x, v(x)) dx` over the torus, or over the mask when given.
pub fn energy(f: &Integrand, v: &PeriodicField, mask: Option<&BallMask>) -> f64 {
    let g = *v.grid();
    match mask {
        Some(m) => m
            .points()
            .iter()
            .map(|p| p.weight * f.eval(&g.point(p.index)[..g.dim_n], v.at(p.index)))
            .sum(),
        None => {
            det_sum(g.len(), |i| f.eval(&g.point(i)[..g.dim_n], v.at(i))) * g.cell_volume()
        }
    }
}

/// Pointwise `∂_z f(x, v(x))`.
pub fn gradient_field(f: &Integrand, v: &PeriodicField) -> PeriodicField {
    let d = v.fiber_dim();
    v.map_with_point(d, |x, z, o| f.grad(x, z, o))
}

/// `‖Π_{ker A, zero mean} ∂_z f(·, v)‖₂`.
pub fn el_residual(f: &Integrand, v: &PeriodicField, op_a: &DiffOperator) -> Result<f64> {
    let set = FeasibleSet::new(&Constraint::AFree {
        op: op_a.clone(),
        mean: vec![0.0; op_a.dim_from()],
    })?;
    Ok(set.project_tangent(&gradient_field(f, v)).l2_norm())
}

/// `‖Π_{im B, zero mean} ∂_z f(·, v)‖₂`, the residual for potential-form problems.
pub fn el_residual_potential(f: &Integrand, v: &PeriodicField, op_b: &DiffOperator) -> Result<f64> {
    let set = FeasibleSet::new(&Constraint::Potential {
        op: op_b.clone(),
        datum: vec![0.0; op_b.dim_to()],
    })?;
    Ok(set.project_tangent(&gradient_field(f, v)).l2_norm())
}

fn initial_field(p: &MinimizeProblem, set: &FeasibleSet) -> Result<PeriodicField> {
    let d = p.constraint.fiber_dim();
    let raw = match &p.init {
        Init::Zero => PeriodicField::zeros(p.grid, d),
        Init::Random {
            seed,
            amplitude,
            band,
        } => PeriodicField::random_band_limited(p.grid, d, *band, *seed).scale(*amplitude),
        Init::Field(f) => {
            if f.grid() != &p.grid || f.fiber_dim() != d {
                return Err(invalid("initial field does not match the problem"));
            }
            f.clone()
        }
    };
    Ok(set.project(&raw))
}

/// Projected gradient descent with Armijo backtracking:
/// `v ← v - τ Π₀ ∂_z f(·, v)` with `Π₀` the zero-mean feasible projection.
pub fn minimize(p: &MinimizeProblem, opts: &SolverOptions) -> Result<MinimizerResult> {
    let d = p.constraint.fiber_dim();
    if p.integrand.fiber_dim != d {
        return Err(LabError::ShapeMismatch {
            expected: d,
            got: p.integrand.fiber_dim,
        });
    }
    if p.grid.dim_n != p.constraint.operator().dim_n() {
        return Err(invalid("grid and operator dimensions differ"));
    }
    let set = FeasibleSet::new(&p.constraint)?;
    let f = &p.integrand;
    let mut v = initial_field(p, &set)?;
    let mut e = energy(f, &v, None);
    let mut history = Vec::new();
    let mut increases = 0usize;
    let mut iterations = 0;
    let mut residual;
    let mut converged = false;
    let mut prev: Option<(PeriodicField, PeriodicField)> = None;
    loop {
        let dir = set.project_tangent(&gradient_field(f, &v));
        let r2 = dir.inner(&dir);
        residual = r2.sqrt();
        if !residual.is_finite() || !e.is_finite() {
            return Err(LabError::Diverged(format!(
                "non-finite energy or residual at iteration {iterations}"
            )));
        }
        if residual < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let mut tau = match &prev {
            Some((pv, pd)) => bb_step(&v.sub(pv), &dir.sub(pd), opts.initial_step),
            None => opts.initial_step,
        };
        // energy differences below this are indistinguishable from rounding
        let flat = 1e-12 * e.abs();
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = v.axpy(-tau, &dir);
            let et = energy(f, &trial, None);
            if et.is_finite() && et <= e - opts.armijo * tau * r2 {
                accepted = Some((trial, et));
                break;
            }
            if et.is_finite() && et <= e + flat {
                let rt = set.project_tangent(&gradient_field(f, &trial)).l2_norm();
                if rt < residual {
                    accepted = Some((trial, et));
                    break;
                }
            }
            tau *= opts.shrink;
        }
        let Some((next, en)) = accepted else {
            // no admissible decrease at machine precision
            break;
        };
        prev = Some((v.clone(), dir));
        iterations += 1;
        if en > e + 1e-12 {
            increases += 1;
            if increases >= 10 {
                return Err(LabError::Diverged(
                    "energy increased over 10 successive steps".into(),
                ));
            }
        } else {
            increases = 0;
        }
        v = if iterations % opts.reproject_every.max(1) == 0 {
            set.project(&next)
        } else {
            next
        };
        e = energy(f, &v, None);
        if opts.record_history {
            history.push(HistoryEntry {
                energy: e,
                residual,
                step: tau,
            });
        }
    }
    let projected = set.project(&v);
    let constraint_residual = projected.sub(&v).max_abs();
    let v = projected;
    let energy_final = energy(f, &v, None);
    Ok(MinimizerResult {
        field: v,
        energy: energy_final,
        el_residual: residual,
        iterations,
        converged,
        history,
        constraint_residual,
    })
}

/// Barzilai-Borwein step `⟨s,s⟩/⟨s,y⟩`, clipped to `[base/1e3, base·1e3]`.
fn bb_step(s: &PeriodicField, y: &PeriodicField, base: f64) -> f64 {
    let sy = s.inner(y);
    if sy > 0.0 {
        (s.inner(s) / sy).clamp(base * 1e-3, base * 1e3)
    } else {
        base
    }
}
