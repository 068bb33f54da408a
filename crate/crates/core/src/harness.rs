//! Run configurations, dispatch to the lab operations, and reproducible run records.
//!
//! A [`RunConfig`] names one command and its inputs. [`run`] executes it and
//! returns a [`RunRecord`] whose body (everything except the wall time) is a
//! deterministic function of the configuration. [`batch`] runs a manifest and
//! aggregates a CSV matrix of metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::aharmonic::{harmonic_approx_experiment, scale_to_energy, ApproxOptions, BilinearFormA};
use crate::error::{LabError, Result};
use crate::integrands::IntegrandConfig;
use crate::polyfield::LocalField;
use crate::regularity::{
    excess_scan, fit_polynomial, two_phase_field, verify_caccioppoli, verify_korn_vp, verify_poincare_modular,
    CaccioppoliOptions, KernelOptions, ScanOptions,
};
use crate::solver::{minimize, Constraint, Init, MinimizeProblem, MinimizerResult, SolverOptions};
use crate::spectral::{
    apply_operator, apply_pseudoinverse, decompose, load_field, project_afree, BallMask, GridSpec, PeriodicField,
    SpectralProjector, AFREE_TOLERANCE,
};
use crate::symbol::{build_potential, check_constant_rank, DiffOperator, OperatorSpec};
use crate::util::sub_seed;

/// Version of the run-record layout; bumped when fields change.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

const IDEMPOTENCE_TOLERANCE: f64 = 1e-12;
const RECONSTRUCTION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    RankCheck,
    Potential,
    Project,
    Decompose,
    Minimize,
    VerifyCaccioppoli,
    VerifyPoincare,
    VerifyKorn,
    ExcessScan,
    HarmonicApprox,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::RankCheck,
        Command::Potential,
        Command::Project,
        Command::Decompose,
        Command::Minimize,
        Command::VerifyCaccioppoli,
        Command::VerifyPoincare,
        Command::VerifyKorn,
        Command::ExcessScan,
        Command::HarmonicApprox,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::RankCheck => "rank-check",
            Command::Potential => "potential",
            Command::Project => "project",
            Command::Decompose => "decompose",
            Command::Minimize => "minimize",
            Command::VerifyCaccioppoli => "verify-caccioppoli",
            Command::VerifyPoincare => "verify-poincare",
            Command::VerifyKorn => "verify-korn",
            Command::ExcessScan => "excess-scan",
            Command::HarmonicApprox => "harmonic-approx",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| LabError::Config(format!("unknown command '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub period: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 32,
            period: 1.0,
        }
    }
}

/// Where the input field of a command comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// Seeded band-limited noise, projected onto the subspace the command needs.
    Random {
        #[serde(default = "default_band")]
        band: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    TwoPhase {
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        axis: usize,
        #[serde(default = "default_position")]
        position: f64,
    },
    File {
        path: String,
    },
    /// The minimizer of the configured integrand under the command's constraint.
    Minimizer,
}

fn default_band() -> usize {
    4
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_position() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    Afree,
    Potential,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub radius: f64,
    pub theta: f64,
    pub q: f64,
    pub p: f64,
    pub tau: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub depth: usize,
    pub gamma: f64,
    /// Ball centers; the grid center when empty.
    pub centers: Vec<Vec<f64>>,
    /// Mean of an A-free field or datum of a potential constraint; zero when empty.
    pub mean: Vec<f64>,
    pub constraint: ConstraintKind,
    pub init: Init,
    pub samples: usize,
    pub cap: f64,
    pub degree: Option<u32>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Row-major bilinear form for `harmonic-approx`; identity when absent.
    pub form: Option<Vec<f64>>,
    /// Spectral resampling of the input field before measuring.
    pub resample: Option<usize>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            radius: 0.3,
            theta: 0.5,
            q: 1.2,
            p: 1.5,
            tau: 1.0 / 20.0,
            alpha: 0.3,
            epsilon: 1.0,
            depth: 1,
            gamma: 1.0,
            centers: Vec::new(),
            mean: Vec::new(),
            constraint: ConstraintKind::Afree,
            init: Init::Zero,
            samples: 200,
            cap: 1e3,
            degree: None,
            tol: None,
            max_iter: None,
            form: None,
            resample: None,
        }
    }
}

fn default_dim() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub name: Option<String>,
    /// Dimension used for bare operator names.
    #[serde(default = "default_dim")]
    pub dim_n: usize,
    pub operator: OperatorSpec,
    /// Second operator: the potential `B` of `decompose`, or `C` for the Poincaré and Korn checks.
    #[serde(default)]
    pub potential: Option<OperatorSpec>,
    #[serde(default)]
    pub integrand: Option<IntegrandConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub field: Option<FieldSource>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: u64,
    /// Output directory for the record and CSV files.
    #[serde(default)]
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.command.to_string())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    /// Parameter checks that do not need the operators.
    pub fn validate(&self, base_dir: Option<&Path>) -> Result<()> {
        let p = &self.params;
        let bad = |m: &str| Err(LabError::Config(format!("{}: {m}", self.display_name())));
        if self.dim_n == 0 {
            return bad("dim_n must be positive");
        }
        if self.grid.points < 4 || self.grid.points % 2 != 0 {
            return bad("grid.points must be even and at least 4");
        }
        if !(self.grid.period > 0.0) {
            return bad("grid.period must be positive");
        }
        if !(p.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !(p.theta > 0.0 && p.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(p.p > 1.0 && p.p.is_finite()) {
            return bad("p must lie in (1, inf)");
        }
        if !(p.gamma > 0.0 && p.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if p.samples == 0 {
            return bad("samples must be positive");
        }
        if let Some(r) = p.resample {
            if r < 4 || r % 2 != 0 {
                return bad("resample must be even and at least 4");
            }
        }
        if let Some(FieldSource::File { path }) = &self.field {
            if !resolve(base_dir, path).exists() {
                return bad(&format!("field file {path} does not exist"));
            }
        }
        if let OperatorSpec::File { file } = &self.operator {
            if !resolve(base_dir, file).exists() {
                return bad(&format!("operator file {file} does not exist"));
            }
        }
        Ok(())
    }
}

fn resolve(base_dir: Option<&Path>, path: &str) -> PathBuf {
    match base_dir {
        Some(d) => d.join(path),
        None => PathBuf::from(path),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory relative file references are resolved against.
    pub base_dir: Option<PathBuf>,
    /// Worker threads for the run; the global pool when absent.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub constrank: String,
    pub record_schema: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            constrank: env!("CARGO_PKG_VERSION").to_string(),
            record_schema: RECORD_SCHEMA_VERSION,
        }
    }
}

/// A plot-ready table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LabError::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| fmt_f64(*v))).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub command: Command,
    pub config_hash: String,
    pub versions: Versions,
    pub seed: u64,
    pub wall_time_s: f64,
    pub report: Value,
    pub metrics: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub table: Option<Table>,
}

impl RunRecord {
    /// The record without timing information.
    pub fn body(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("record serializes");
        v.as_object_mut().expect("object").remove("wall_time_s");
        v
    }

    pub fn body_string(&self) -> String {
        serde_json::to_string(&self.body()).expect("record serializes")
    }

    /// Writes `<name>.json` and, when present, `<name>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let stem = sanitize(&self.name);
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        if let Some(t) = &self.table {
            std::fs::write(dir.join(format!("{stem}.csv")), t.to_csv()?)?;
        }
        Ok(())
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Outcome {
    report: Value,
    metrics: BTreeMap<String, f64>,
    pass: bool,
    table: Option<Table>,
}

impl Outcome {
    fn new<T: Serialize>(report: &T, pass: bool) -> Result<Self> {
        Ok(Self {
            report: serde_json::to_value(report)?,
            metrics: BTreeMap::new(),
            pass,
            table: None,
        })
    }

    fn metric(mut self, key: &str, v: f64) -> Self {
        self.metrics.insert(key.to_string(), v);
        self
    }
}

pub fn run(config: &RunConfig) -> Result<RunRecord> {
    run_with(config, &RunOptions::default())
}

/// Validates and executes `config`. Module errors are returned with the run name as context.
pub fn run_with(config: &RunConfig, opts: &RunOptions) -> Result<RunRecord> {
    config.validate(opts.base_dir.as_deref())?;
    let start = Instant::now();
    let outcome = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| LabError::Config(e.to_string()))?
            .install(|| dispatch(config, opts)),
        None => dispatch(config, opts),
    }
    .map_err(|e| match e {
        LabError::Config(_) => e,
        other => LabError::Context {
            context: format!("{} ({})", config.display_name(), config.command),
            source: Box::new(other),
        },
    })?;
    Ok(RunRecord {
        name: config.display_name(),
        command: config.command,
        config_hash: config.hash(),
        versions: Versions::default(),
        seed: config.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        report: outcome.report,
        metrics: outcome.metrics,
        pass: outcome.pass,
        error: None,
        table: outcome.table,
    })
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    base: Option<&'a Path>,
    op: DiffOperator,
    grid: GridSpec,
}

impl Ctx<'_> {
    fn second(&self) -> Result<Option<DiffOperator>> {
        self.cfg
            .potential
            .as_ref()
            .map(|s| s.resolve(self.cfg.dim_n, self.base))
            .transpose()
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        if self.cfg.params.centers.is_empty() {
            vec![vec![self.grid.period / 2.0; self.grid.dim_n]]
        } else {
            self.cfg.params.centers.clone()
        }
    }

    fn center(&self) -> Vec<f64> {
        self.centers().swap_remove(0)
    }

    fn mean(&self, dim: usize) -> Result<Vec<f64>> {
        let m = &self.cfg.params.mean;
        if m.is_empty() {
            Ok(vec![0.0; dim])
        } else if m.len() == dim {
            Ok(m.clone())
        } else {
            Err(LabError::Config(format!("mean has {} entries, expected {dim}", m.len())))
        }
    }

    fn field_seed(&self) -> u64 {
        sub_seed(self.cfg.seed, 1)
    }

    fn source(&self, default: FieldSource) -> FieldSource {
        self.cfg.field.clone().unwrap_or(default)
    }

    fn load(&self, path: &str, fiber: usize) -> Result<PeriodicField> {
        let f = load_field(&resolve(self.base, path))?;
        if f.fiber_dim() != fiber || f.grid().dim_n != self.grid.dim_n {
            return Err(LabError::Config(format!("field {path} has the wrong shape")));
        }
        Ok(f)
    }

    fn resampled(&self, f: PeriodicField) -> Result<PeriodicField> {
        match self.cfg.params.resample {
            Some(n) if n != f.grid().points_per_axis => f.resample(n),
            _ => Ok(f),
        }
    }

    fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.cfg.params.tol.unwrap_or(d.tol),
            max_iter: self.cfg.params.max_iter.unwrap_or(d.max_iter),
            ..d
        }
    }

    fn minimize(&self, kind: ConstraintKind) -> Result<MinimizerResult> {
        let constraint = match kind {
            ConstraintKind::Afree => Constraint::AFree {
                op: self.op.clone(),
                mean: self.mean(self.op.dim_from())?,
            },
            ConstraintKind::Potential => Constraint::Potential {
                op: self.op.clone(),
                datum: self.mean(self.op.dim_to())?,
            },
        };
        let integrand = self.cfg.integrand.clone().unwrap_or_default().build(
            constraint.fiber_dim(),
            self.grid.dim_n,
            self.grid.period,
        )?;
        let problem = MinimizeProblem {
            integrand,
            constraint,
            grid: self.grid,
            init: self.cfg.params.init.clone(),
        };
        minimize(&problem, &self.solver_options())
    }

    /// Seeded field in the coimage of the operator (so that `C* u = 0`).
    fn coimage_field(&self) -> Result<PeriodicField> {
        let p = self.op.dim_from();
        match self.source(FieldSource::Random {
            band: default_band(),
            amplitude: default_amplitude(),
        }) {
            FieldSource::Random { band, amplitude } => {
                let raw = PeriodicField::random_band_limited(self.grid, p, band, self.field_seed());
                self.resampled(SpectralProjector::coimage_of(&self.op)?.apply(&raw)?.scale(amplitude))
            }
            FieldSource::File { path } => self.resampled(self.load(&path, p)?),
            other => Err(unsupported(self.cfg.command, &other)),
        }
    }
}

fn unsupported(command: Command, source: &FieldSource) -> LabError {
    LabError::Config(format!("{command} does not accept field source {source:?}"))
}

fn dispatch(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let base = opts.base_dir.as_deref();
    let op = cfg.operator.resolve(cfg.dim_n, base)?;
    let grid = GridSpec::new(op.dim_n(), cfg.grid.points, cfg.grid.period)
        .map_err(|e| LabError::Config(e.to_string()))?;
    if cfg.params.centers.iter().any(|c| c.len() != grid.dim_n) {
        return Err(LabError::Config(format!(
            "{}: centers must have {} coordinates",
            cfg.display_name(),
            grid.dim_n
        )));
    }
    let ctx = Ctx { cfg, base, op, grid };
    match cfg.command {
        Command::RankCheck => rank_check(&ctx),
        Command::Potential => potential(&ctx),
        Command::Project => project(&ctx),
        Command::Decompose => run_decompose(&ctx),
        Command::Minimize => run_minimize(&ctx),
        Command::VerifyCaccioppoli => caccioppoli(&ctx),
        Command::VerifyPoincare | Command::VerifyKorn => poincare_korn(&ctx),
        Command::ExcessScan => scan(&ctx),
        Command::HarmonicApprox => harmonic(&ctx),
    }
}

fn rank_check(ctx: &Ctx) -> Result<Outcome> {
    let r = check_constant_rank(&ctx.op, ctx.cfg.params.samples)?;
    Ok(Outcome::new(&r, r.is_constant_rank)?
        .metric("rank", r.rank as f64)
        .metric("is_constant_rank", f64::from(u8::from(r.is_constant_rank))))
}

fn potential(ctx: &Ctx) -> Result<Outcome> {
    let s = build_potential(&ctx.op)?.summary(&ctx.op);
    Ok(Outcome::new(&s, s.exact_sequence)?
        .metric("degree", f64::from(s.degree))
        .metric("elliptic", f64::from(u8::from(s.elliptic))))
}

#[derive(Serialize)]
struct ProjectReport {
    residual: f64,
    idempotence: f64,
    residual_tolerance: f64,
    idempotence_tolerance: f64,
}

fn project(ctx: &Ctx) -> Result<Outcome> {
    let f = match ctx.source(FieldSource::Random {
        band: default_band(),
        amplitude: default_amplitude(),
    }) {
        FieldSource::Random { band, amplitude } => {
            PeriodicField::random_band_limited(ctx.grid, ctx.op.dim_from(), band, ctx.field_seed()).scale(amplitude)
        }
        FieldSource::File { path } => ctx.load(&path, ctx.op.dim_from())?,
        other => return Err(unsupported(ctx.cfg.command, &other)),
    };
    let pf = project_afree(&ctx.op, &f)?;
    let scale = f.l2_norm().max(f64::MIN_POSITIVE);
    let residual = apply_operator(&ctx.op, &pf)?.l2_norm() / scale;
    let idempotence = project_afree(&ctx.op, &pf)?.sub(&pf).max_abs();
    let r = ProjectReport {
        residual,
        idempotence,
        residual_tolerance: AFREE_TOLERANCE,
        idempotence_tolerance: IDEMPOTENCE_TOLERANCE,
    };
    let pass = residual < AFREE_TOLERANCE && idempotence < IDEMPOTENCE_TOLERANCE;
    Ok(Outcome::new(&r, pass)?.metric("residual", residual).metric("idempotence", idempotence))
}

#[derive(Serialize)]
struct DecomposeReport<S: Serialize> {
    #[serde(flatten)]
    summary: S,
    reconstruction_error: f64,
    tolerance: f64,
}

fn run_decompose(ctx: &Ctx) -> Result<Outcome> {
    let op_b = match ctx.second()? {
        Some(b) => b,
        None => build_potential(&ctx.op)?
            .operator
            .ok_or_else(|| LabError::Config("operator is elliptic and has no potential".into()))?,
    };
    let mean = ctx.mean(ctx.op.dim_from())?;
    let f = match ctx.source(FieldSource::Random {
        band: default_band(),
        amplitude: default_amplitude(),
    }) {
        FieldSource::Random { band, amplitude } => {
            let raw = PeriodicField::random_band_limited(ctx.grid, ctx.op.dim_from(), band, ctx.field_seed());
            project_afree(&ctx.op, &raw)?.scale(amplitude).shift(&mean)
        }
        FieldSource::File { path } => ctx.load(&path, ctx.op.dim_from())?,
        other => return Err(unsupported(ctx.cfg.command, &other)),
    };
    let d = decompose(&ctx.op, &op_b, &f)?;
    let err = apply_operator(&op_b, &d.u)?.add(&d.s).sub(&f).max_abs();
    let s = d.summary();
    let metrics = [
        ("afree_residual", s.afree_residual),
        ("c_star_residual", s.c_star_residual),
        ("s_deviation", s.s_deviation),
        ("reconstruction_error", err),
    ];
    let mut out = Outcome::new(
        &DecomposeReport {
            summary: s,
            reconstruction_error: err,
            tolerance: RECONSTRUCTION_TOLERANCE,
        },
        err < RECONSTRUCTION_TOLERANCE,
    )?;
    for (k, v) in metrics {
        out = out.metric(k, v);
    }
    Ok(out)
}

fn history_table(m: &MinimizerResult) -> Table {
    Table {
        header: ["iteration", "energy", "residual", "step"].map(String::from).to_vec(),
        rows: m
            .history
            .iter()
            .enumerate()
            .map(|(i, h)| vec![i as f64, h.energy, h.residual, h.step])
            .collect(),
    }
}

fn run_minimize(ctx: &Ctx) -> Result<Outcome> {
    let m = ctx.minimize(ctx.cfg.params.constraint)?;
    let mut report = serde_json::to_value(m.summary())?;
    report.as_object_mut().expect("object").remove("history");
    let s = m.summary();
    let mut out = Outcome::new(&report, m.converged)?
        .metric("energy", s.energy)
        .metric("el_residual", s.el_residual)
        .metric("iterations", s.iterations as f64)
        .metric("oscillation", s.oscillation)
        .metric("constraint_residual", s.constraint_residual);
    out.table = Some(history_table(&m));
    Ok(out)
}

fn caccioppoli(ctx: &Ctx) -> Result<Outcome> {
    match ctx.source(FieldSource::Minimizer) {
        FieldSource::Minimizer => {}
        other => return Err(unsupported(ctx.cfg.command, &other)),
    }
    let datum = ctx.mean(ctx.op.dim_to())?;
    let m = ctx.minimize(ConstraintKind::Potential)?;
    let integrand = ctx.cfg.integrand.clone().unwrap_or_default().build(
        ctx.op.dim_to(),
        ctx.grid.dim_n,
        ctx.grid.period,
    )?;
    let neg: Vec<f64> = datum.iter().map(|d| -d).collect();
    let per = ctx.resampled(apply_pseudoinverse(&ctx.op, &m.field.shift(&neg))?)?;
    let center = ctx.center();
    let u = LocalField::with_poly(per, fit_polynomial(&datum, &ctx.op)?, &center)?;
    let opts = CaccioppoliOptions {
        cap: ctx.cfg.params.cap,
        ..Default::default()
    };
    let r = verify_caccioppoli(&u, &integrand, &ctx.op, &center, ctx.cfg.params.radius, None, &opts)?;
    Ok(Outcome::new(&r, r.pass)?
        .metric("R", ctx.cfg.params.radius)
        .metric("lhs", r.lhs)
        .metric("rhs", r.rhs)
        .metric("ratio", r.ratio)
        .metric("el_residual", m.el_residual))
}

fn poincare_korn(ctx: &Ctx) -> Result<Outcome> {
    let op_c = ctx.second()?;
    let u = LocalField::periodic(ctx.coimage_field()?);
    let center = ctx.center();
    let p = &ctx.cfg.params;
    let opts = KernelOptions {
        degree: p.degree,
        cap: p.cap,
        ..Default::default()
    };
    let out = if ctx.cfg.command == Command::VerifyKorn {
        let k = verify_korn_vp(&u, &ctx.op, op_c.as_ref(), &center, p.radius, p.theta, p.p, &opts)?;
        Outcome::new(&k, k.report.pass)?
            .metric("p", p.p)
            .metric("lhs", k.report.lhs)
            .metric("rhs", k.report.rhs)
            .metric("ratio", k.report.ratio)
            .metric("l2_ratio", k.l2_ratio)
    } else {
        let r = verify_poincare_modular(&u, &ctx.op, op_c.as_ref(), &center, p.radius, p.theta, p.q, &opts)?;
        Outcome::new(&r, r.pass)?
            .metric("q", p.q)
            .metric("lhs", r.lhs)
            .metric("rhs", r.rhs)
            .metric("ratio", r.ratio)
    };
    Ok(out.metric("R", p.radius).metric("theta", p.theta))
}

fn scan(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.cfg.params;
    let w = match ctx.source(FieldSource::Minimizer) {
        FieldSource::Minimizer => {
            let m = ctx.minimize(ConstraintKind::Afree)?;
            if !m.converged {
                return Err(LabError::Diverged(format!(
                    "minimizer did not converge in {} iterations",
                    m.iterations
                )));
            }
            m.field
        }
        FieldSource::TwoPhase {
            a,
            b,
            axis,
            position,
        } => two_phase_field(ctx.grid, &a, &b, axis, position)?,
        FieldSource::Random { band, amplitude } => {
            let raw = PeriodicField::random_band_limited(ctx.grid, ctx.op.dim_from(), band, ctx.field_seed());
            project_afree(&ctx.op, &raw)?
                .scale(amplitude)
                .shift(&ctx.mean(ctx.op.dim_from())?)
        }
        FieldSource::File { path } => ctx.load(&path, ctx.op.dim_from())?,
    };
    let w = ctx.resampled(w)?;
    let opts = ScanOptions {
        tau: p.tau,
        depth: p.depth,
        alpha: p.alpha,
        epsilon: p.epsilon,
    };
    let r = excess_scan(&w, &ctx.centers(), p.radius, &opts)?;
    let mut rows = Vec::new();
    for (i, c) in r.centers.iter().enumerate() {
        for (radius, e) in c.radii.iter().zip(&c.excess) {
            rows.push(vec![i as f64, *radius, *e]);
        }
    }
    let regular = r.centers.iter().filter(|c| c.regular).count();
    let (lo, hi) = r
        .centers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| {
            (l.min(c.fitted_exponent), h.max(c.fitted_exponent))
        });
    let mut out = Outcome::new(&r, r.pass)?
        .metric("regular_centers", regular as f64)
        .metric("min_fitted_exponent", lo)
        .metric("max_fitted_exponent", hi);
    out.table = Some(Table {
        header: ["center", "R", "excess"].map(String::from).to_vec(),
        rows,
    });
    Ok(out)
}

fn harmonic(ctx: &Ctx) -> Result<Outcome> {
    let p = &ctx.cfg.params;
    let op_c = ctx.second()?;
    let form = match &p.form {
        Some(m) => BilinearFormA::new(m.clone(), &ctx.op)?,
        None => BilinearFormA::identity(&ctx.op)?,
    };
    let center = ctx.center();
    let raw = LocalField::periodic(ctx.coimage_field()?);
    let mask = BallMask::new(*raw.periodic.grid(), &center, p.radius)?;
    let s = scale_to_energy(&raw, &ctx.op, &mask, 1.0)?;
    let w = LocalField::periodic(raw.periodic.scale(s));
    let opts = ApproxOptions {
        degree: p.degree,
        seed: sub_seed(ctx.cfg.seed, 2),
        ..Default::default()
    };
    let r = harmonic_approx_experiment(&w, &form, &ctx.op, op_c.as_ref(), &center, p.radius, p.gamma, &opts)?;
    Ok(Outcome::new(&r, r.within_bound)?
        .metric("gamma", r.gamma)
        .metric("delta", r.delta)
        .metric("modular_distance", r.modular_distance)
        .metric("h_energy", r.h_energy)
        .metric("w_energy", r.w_energy))
}

/// A list of runs, optionally filtered by a substring of the run name or command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub runs: Vec<RunConfig>,
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub parallel: bool,
}

impl Manifest {
    /// Accepts either `{"runs": [...]}` or a bare array of configs.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))?;
        let v = if v.is_array() { serde_json::json!({ "runs": v }) } else { v };
        serde_json::from_value(v).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Selected runs with default names `NNN-command` filled in.
    pub fn selected(&self) -> Vec<RunConfig> {
        self.runs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut c = c.clone();
                if c.name.is_none() {
                    c.name = Some(format!("{i:03}-{}", c.command));
                }
                c
            })
            .filter(|c| match &self.filter {
                Some(f) => c.display_name().contains(f.as_str()) || c.command.as_str().contains(f.as_str()),
                None => true,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: Vec<String>,
    pub records: Vec<RunRecord>,
}

impl BatchSummary {
    pub fn all_pass(&self) -> bool {
        self.failed.is_empty()
    }

    /// One row per run, one column per metric seen in any run.
    pub fn matrix(&self) -> (Vec<String>, Vec<(String, Vec<Option<f64>>)>) {
        let mut keys: Vec<String> = self
            .records
            .iter()
            .flat_map(|r| r.metrics.keys().cloned())
            .collect();
        keys.sort();
        keys.dedup();
        let rows = self
            .records
            .iter()
            .map(|r| (r.name.clone(), keys.iter().map(|k| r.metrics.get(k).copied()).collect()))
            .collect();
        (keys, rows)
    }

    pub fn to_csv(&self) -> Result<String> {
        let (keys, rows) = self.matrix();
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LabError::Io(std::io::Error::other(e));
        let mut header = vec!["experiment".to_string(), "command".to_string(), "pass".to_string()];
        header.extend(keys);
        w.write_record(&header).map_err(io)?;
        for ((name, vals), rec) in rows.into_iter().zip(&self.records) {
            let mut line = vec![name, rec.command.to_string(), rec.pass.to_string()];
            line.extend(vals.into_iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            w.write_record(&line).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for r in &self.records {
            r.write(dir)?;
        }
        std::fs::write(dir.join("summary.csv"), self.to_csv()?)?;
        Ok(())
    }
}

/// Runs every selected config; failures become failed records rather than aborting the batch.
pub fn batch(manifest: &Manifest, opts: &RunOptions) -> Result<BatchSummary> {
    let runs = manifest.selected();
    if runs.is_empty() {
        return Err(LabError::Config("manifest selects no runs".into()));
    }
    for c in &runs {
        c.validate(opts.base_dir.as_deref())?;
    }
    let one = |c: &RunConfig| -> RunRecord {
        run_with(c, opts).unwrap_or_else(|e| RunRecord {
            name: c.display_name(),
            command: c.command,
            config_hash: c.hash(),
            versions: Versions::default(),
            seed: c.seed,
            wall_time_s: 0.0,
            report: Value::Null,
            metrics: BTreeMap::new(),
            pass: false,
            error: Some(e.to_string()),
            table: None,
        })
    };
    let records: Vec<RunRecord> = if manifest.parallel {
        runs.par_iter().map(one).collect()
    } else {
        runs.iter().map(one).collect()
    };
    let failed = records.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect::<Vec<_>>();
    Ok(BatchSummary {
        total: records.len(),
        passed: records.len() - failed.len(),
        failed,
        records,
    })
}
