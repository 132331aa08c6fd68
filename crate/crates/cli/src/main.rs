//! `quirk`: train, evaluate, prune, interpret and benchmark QuIRK models.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 numeric failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quirk::QuirkError;

#[derive(Debug, Parser)]
#[command(name = "quirk", version, about = "Kolmogorov-Arnold networks with data re-uploading activations")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides [output] dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for gradient evaluation.
    #[arg(long, global = true, env = "QUIRK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the configured dataset.
    Train,
    /// Report train/val/test RMSE of a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Prune a saved model's weak edges and fine-tune it.
    Prune {
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit polynomials to a saved model's edges.
    Interpret {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train (and prune) on a list of equations.
    Benchmark {
        /// Comma-separated equation ids; overrides [benchmark] equations.
        #[arg(long, value_delimiter = ',')]
        equations: Option<Vec<String>>,
    },
    /// Compare a DR circuit against cubic B-splines at equal parameter budgets.
    CompareActivations {
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
    },
    /// List the registered equations.
    ListEquations,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<QuirkError> for Failure {
    fn from(e: QuirkError) -> Self {
        let code = match &e {
            QuirkError::Io { .. } | QuirkError::Parse { .. } | QuirkError::Version { .. } => 1,
            QuirkError::Divergence { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot configure thread pool: {e}")))?;
    }
    if let Command::ListEquations = cli.command {
        commands::list_equations();
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => return Err(Failure::config("this command needs --config <file>")),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    std::fs::create_dir_all(&cfg.output.dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", cfg.output.dir.display())))?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval { model } => commands::eval(&cfg, &model),
        Command::Prune { model } => commands::prune(&cfg, &model),
        Command::Interpret { model } => commands::interpret(&cfg, &model),
        Command::Benchmark { equations } => commands::benchmark(&cfg, equations),
        Command::CompareActivations { target, budgets } => commands::compare_activations(&cfg, target, budgets),
        Command::ListEquations => unreachable!("handled above"),
    }
}
