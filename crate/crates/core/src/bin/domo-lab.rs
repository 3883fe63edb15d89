use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use domo_lab::experiments::{self, ExperimentConfig, ExperimentKind, RunReport};
use domo_lab::LabError;

/// Tabular experiments with multi-step off-policy operators.
#[derive(Parser, Debug)]
#[command(name = "domo-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random MDP and write it as JSON.
    GenMdp {
        #[arg(long)]
        seed: u64,
        /// Take the MDP size, alpha and gamma from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and write its CSV.
    Run(RunArgs),
    /// Run the numerical audit; exits 1 when a check fails.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        /// Negative control: corrupt the clipped-trace derivative.
        #[arg(long)]
        inject_clip_bug: bool,
    },
    /// Parse and range-check a config, then print it with defaults filled in.
    ValidateConfig { path: PathBuf },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's experiment.
    #[arg(long)]
    experiment: Option<String>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination. Defaults to the config's `output`, then
    /// `<experiment>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "DOMO_LAB_JOBS")]
    jobs: Option<usize>,
}

/// Bad input from the user, reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: LabError) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => experiments::validate_config(p).map_err(|e| match e {
            LabError::Io(io) => anyhow::Error::new(io).context(format!("cannot read {}", p.display())),
            other => usage(other),
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn resolve(args: &RunArgs, forced: Option<ExperimentKind>) -> Result<(ExperimentConfig, PathBuf, usize)> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(name) = &args.experiment {
        cfg.experiment = name.parse().map_err(usage)?;
    }
    if let Some(kind) = forced {
        cfg.experiment = kind;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(usage)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.experiment)));
    let jobs = match args.jobs {
        Some(0) => return Err(UsageError("--jobs must be >= 1".into()).into()),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok((cfg, out, jobs))
}

fn print_summary(report: &RunReport) {
    let headline: &[&str] = match report.experiment {
        ExperimentKind::FigBiasVariance => &["bias_sq", "variance", "mse"],
        ExperimentKind::TheoremAudit => &[],
        _ => &["error_l2"],
    };
    if !headline.is_empty() {
        println!(
            "{:<18} {:>10} {:>5} {:<10} {:>12} {:>12} {:>5}",
            "algorithm", "param", "iter", "metric", "mean", "std_err", "n"
        );
        for s in report.summary().iter().filter(|s| headline.contains(&s.metric.as_str())) {
            println!(
                "{:<18} {:>10} {:>5} {:<10} {:>12.4e} {:>12.4e} {:>5}",
                s.algorithm,
                experiments::format_float(s.trace_param),
                s.iteration,
                s.metric,
                s.mean,
                s.std_err,
                s.count
            );
        }
    }
    for c in &report.checks {
        println!(
            "{} {:<28} statistic {:>12.4e}  threshold {:>9.2e}  cases {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.statistic,
            c.threshold,
            c.cases
        );
    }
    for f in &report.failures {
        eprintln!("seed {} failed: {}", f.seed, f.reason);
    }
    if !report.failures.is_empty() {
        eprintln!("{} run(s) failed", report.failures.len());
    }
}

fn run(args: &RunArgs, forced: Option<ExperimentKind>, clip_bug: bool) -> Result<bool> {
    let (mut cfg, out, jobs) = resolve(args, forced)?;
    cfg.audit.inject_clip_bug |= clip_bug;
    let report = experiments::run_experiment(&cfg, jobs)?;
    experiments::write_csv(&out, &report.rows).with_context(|| format!("cannot write {}", out.display()))?;
    print_summary(&report);
    eprintln!("wrote {} rows to {}", report.rows.len(), out.display());
    Ok(report.succeeded())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenMdp { seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let mdp = cfg.mdp.generate(seed).map_err(usage)?;
            mdp.save(&out).with_context(|| format!("cannot write {}", out.display()))?;
            Ok(true)
        }
        Command::Run(args) => run(&args, None, false),
        Command::Audit { run: args, inject_clip_bug } => {
            run(&args, Some(ExperimentKind::TheoremAudit), inject_clip_bug)
        }
        Command::ValidateConfig { path } => {
            let cfg = load_config(Some(&path))?;
            print!("{}", toml::to_string(&cfg)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
