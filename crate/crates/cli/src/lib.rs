//! Command-line front end: configuration, dispatch and artifact emission.

pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] polymer_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        use polymer_core::Error as E;
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Core(
                E::InvalidParameter { .. }
                | E::Horizon { .. }
                | E::Regime(_)
                | E::StepOutOfRange { .. }
                | E::MemoryBudget { .. }
                | E::QuadratureTooLarge { .. }
                | E::InsufficientSteps { .. }
                | E::OutsideTable { .. },
            ) => EXIT_CONFIG,
            _ => EXIT_FAILED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "polymer", version, about = "Directed polymer experiments on Z^d x R")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value config file (CLI flags take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Any config key, as key=value (repeatable).
    #[arg(long = "set", global = true, value_parser = parse_kv)]
    pub set: Vec<(String, String)>,
    #[arg(long, global = true)]
    pub d: Option<String>,
    #[arg(long, global = true)]
    pub beta: Option<String>,
    #[arg(long, global = true)]
    pub t: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[arg(long = "n-env", global = true)]
    pub n_env: Option<String>,
    #[arg(long = "n-paths", global = true)]
    pub n_paths: Option<String>,
    #[arg(long = "n-pairs", global = true)]
    pub n_pairs: Option<String>,
    #[arg(long = "n-max", global = true)]
    pub n_max: Option<String>,
    #[arg(long, global = true)]
    pub radius: Option<String>,
    #[arg(long, global = true)]
    pub dt: Option<String>,
    #[arg(long = "box", global = true)]
    pub box_radius: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Kernel cache file (blob plus JSON manifest); a trailing / names a directory.
    #[arg(long = "kernel-cache", global = true)]
    pub kernel_cache: Option<PathBuf>,
    /// Also write long-format CSVs for plotting.
    #[arg(long = "plot-data", global = true)]
    pub plot_data: bool,
    /// Discrete Laplacian of the SHE integrator: walk (generator) or graph.
    #[arg(long, global = true)]
    pub laplacian: Option<String>,
    /// Omit wall times so that reports are byte-identical across reruns.
    #[arg(long = "no-timing", global = true)]
    pub no_timing: bool,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, found `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// α_d with its tail bound, β*, λ(β).
    Constants,
    /// Walk kernel checks: mass, lclt.
    Transition { action: Option<String> },
    /// Partition functions: mean-one, second-moment, profile, martingale, l2-rate, positivity.
    Partition { action: Option<String> },
    /// Gap moments and kernel ratios: lambda, a-cells, a-bound, p-ratio, q-iota, convolution, psi.
    Moments { action: Option<String> },
    /// Decay of the factorization error δ.
    Factorization,
    /// Lattice SHE: fk, ratio, integrate.
    She { action: Option<String> },
    /// Lower tail: empirical, discrete.
    Tail { action: Option<String> },
    /// Quick invariant and reproducibility battery.
    Selftest,
    /// Print the report schema.
    Schema,
}

impl Command {
    fn name_and_action(&self) -> (&'static str, Option<String>) {
        match self {
            Command::Constants => ("constants", None),
            Command::Transition { action } => ("transition", action.clone()),
            Command::Partition { action } => ("partition", action.clone()),
            Command::Moments { action } => ("moments", action.clone()),
            Command::Factorization => ("factorization", None),
            Command::She { action } => ("she", action.clone()),
            Command::Tail { action } => ("tail", action.clone()),
            Command::Selftest => ("selftest", None),
            Command::Schema => ("schema", None),
        }
    }
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut kv = self.set.clone();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                kv.push((k.to_string(), v.clone()));
            }
        };
        put("d", &self.d);
        put("beta", &self.beta);
        put("t", &self.t);
        put("seed", &self.seed);
        put("n_env", &self.n_env);
        put("n_paths", &self.n_paths);
        put("n_pairs", &self.n_pairs);
        put("n_max", &self.n_max);
        put("radius", &self.radius);
        put("dt", &self.dt);
        put("box", &self.box_radius);
        put("workers", &self.workers);
        put("laplacian", &self.laplacian);
        put("out", &self.out.as_ref().map(|p| p.display().to_string()));
        put("kernel_cache", &self.kernel_cache.as_ref().map(|p| p.display().to_string()));
        if self.plot_data {
            kv.push(("plot_data".into(), "true".into()));
        }
        if self.no_timing {
            kv.push(("timing".into(), "false".into()));
        }
        kv
    }
}

/// Outcome of one run: exit code and the report path, if one was written.
pub struct Outcome {
    pub code: i32,
    pub report: Option<PathBuf>,
    pub summary: String,
}

/// Resolves the configuration and runs one command.
pub fn execute(cli: &Cli) -> Result<Outcome, RunError> {
    let (name, action) = cli.command.name_and_action();
    if name == "schema" {
        let text = serde_json::to_string_pretty(&report::report_schema()).map_err(std::io::Error::other)?;
        return Ok(Outcome { code: EXIT_OK, report: None, summary: text });
    }
    let action = commands::resolve_action(name, action.as_deref())?;
    let cfg = RunConfig::resolve(name, &action, cli.common.config.as_deref(), &cli.common.overrides())?;
    let workers: usize = cfg.get("workers", "0")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let mut rep = pool.install(|| commands::dispatch(&cfg))?;
    let path = rep.finish(&cfg)?;
    Ok(Outcome { code: if rep.passed() { EXIT_OK } else { EXIT_FAILED }, report: Some(path), summary: rep.summary() })
}

/// Entry point shared by the binary and the tests.
pub fn run_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", out.summary);
            if let Some(p) = out.report {
                let _ = writeln!(stdout, "report: {}", p.display());
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
