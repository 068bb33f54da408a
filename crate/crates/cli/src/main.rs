use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use constrank::harness::{batch, run_with, Command, Manifest, RunConfig, RunOptions};
use serde_json::Value;

/// Numerical lab for constant-rank operators and linear-growth variational problems.
#[derive(Parser)]
#[command(name = "constrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Check that an operator has constant rank.
    RankCheck(RunArgs),
    /// Build the potential operator of a constant-rank operator.
    Potential(RunArgs),
    /// Project a field onto the kernel of an operator.
    Project(RunArgs),
    /// Split an A-free field into B u plus its mean.
    Decompose(RunArgs),
    /// Minimize a linear-growth integral on a periodic grid.
    Minimize(RunArgs),
    VerifyCaccioppoli(RunArgs),
    VerifyPoincare(RunArgs),
    VerifyKorn(RunArgs),
    /// Measure excess decay around centers.
    ExcessScan(RunArgs),
    HarmonicApprox(RunArgs),
    /// Run every config of a manifest.
    Batch(BatchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "CONSTRANK_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Only run configs whose name or command contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Run configs concurrently.
    #[arg(long)]
    parallel: bool,
}

fn base_dir(path: &Path) -> Option<PathBuf> {
    path.parent().map(Path::to_path_buf)
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn single(command: Command, args: &RunArgs) -> anyhow::Result<bool> {
    init_threads(args.threads)?;
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut v: Value = serde_json::from_str(&text).context("parsing the config")?;
    let obj = v.as_object_mut().context("config must be a JSON object")?;
    match obj.get("command").and_then(Value::as_str) {
        None => {
            obj.insert("command".into(), Value::String(command.to_string()));
        }
        Some(c) if c != command.as_str() => bail!("config is for '{c}', not '{command}'"),
        Some(_) => {}
    }
    let mut config: RunConfig = serde_json::from_value(v).context("invalid config")?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let opts = RunOptions {
        base_dir: base_dir(&args.config),
        threads: None,
    };
    let record = run_with(&config, &opts)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    if let Some(dir) = args.out.clone().or(config.out.as_ref().map(PathBuf::from)) {
        record.write(&dir)?;
    }
    Ok(record.pass)
}

fn run_batch(args: &BatchArgs) -> anyhow::Result<bool> {
    init_threads(args.run.threads)?;
    let mut manifest = Manifest::load(&args.run.config)?;
    if args.filter.is_some() {
        manifest.filter = args.filter.clone();
    }
    manifest.parallel |= args.parallel;
    if let Some(s) = args.run.seed {
        for r in &mut manifest.runs {
            r.seed = s;
        }
    }
    let opts = RunOptions {
        base_dir: base_dir(&args.run.config),
        threads: None,
    };
    let summary = batch(&manifest, &opts)?;
    for r in &summary.records {
        let status = if r.pass { "pass" } else { "FAIL" };
        match &r.error {
            Some(e) => eprintln!("{status} {} ({e})", r.name),
            None => eprintln!("{status} {}", r.name),
        }
    }
    eprintln!("{}/{} passed", summary.passed, summary.total);
    print!("{}", summary.to_csv()?);
    if let Some(dir) = &args.run.out {
        summary.write(dir)?;
    }
    Ok(summary.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Sub::RankCheck(a) => single(Command::RankCheck, a),
        Sub::Potential(a) => single(Command::Potential, a),
        Sub::Project(a) => single(Command::Project, a),
        Sub::Decompose(a) => single(Command::Decompose, a),
        Sub::Minimize(a) => single(Command::Minimize, a),
        Sub::VerifyCaccioppoli(a) => single(Command::VerifyCaccioppoli, a),
        Sub::VerifyPoincare(a) => single(Command::VerifyPoincare, a),
        Sub::VerifyKorn(a) => single(Command::VerifyKorn, a),
        Sub::ExcessScan(a) => single(Command::ExcessScan, a),
        Sub::HarmonicApprox(a) => single(Command::HarmonicApprox, a),
        Sub::Batch(a) => run_batch(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
