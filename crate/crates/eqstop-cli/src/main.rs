//! `eqstop`: compute equilibrium stopping rules for an impatient agent
//! whose discounting is steeper now than later.
//!
//! Configuration comes from an optional JSON file (`--config`), with any
//! command-line flag overriding the corresponding field and the
//! `EQSTOP_SEED` environment variable overriding the seed last. Exit
//! codes: 0 on success, 1 for configuration or usage errors, 2 when a
//! computation starts but fails to converge or a validation check fails.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{DiscountChoice, OutputFormat, ProblemChoice, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "eqstop", version, about = "Equilibrium stopping under time-inconsistent discounting")]
struct Cli {
    /// JSON configuration file; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Impatience parameter of the hyperbolic discount 1/(1 + beta s).
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Discount family.
    #[arg(long, global = true, value_enum)]
    discount: Option<DiscountChoice>,

    /// Threshold the iteration starts from (default: the naive level).
    #[arg(long, global = true)]
    start_threshold: Option<f64>,

    /// Number of spatial grid points.
    #[arg(long, global = true)]
    grid_n: Option<usize>,

    /// Monte Carlo sample paths per state.
    #[arg(long, global = true)]
    n_paths: Option<usize>,

    /// Euler time step.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Simulation horizon.
    #[arg(long, global = true)]
    horizon: Option<f64>,

    /// Master random seed (EQSTOP_SEED overrides this).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Primary artifact format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the model constants for the configured beta.
    Constants,
    /// Run the improvement map to its fixed point, recording each rule.
    Iterate {
        /// Which worked example to iterate on.
        #[arg(long, value_enum)]
        problem: Option<ProblemChoice>,
        /// Give up after this many improvement steps.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Sample the naive rule's moving boundary s -> sqrt(1/beta + (s - t)).
    Boundary {
        /// Time the rule was committed at.
        #[arg(long)]
        t: Option<f64>,
        /// Last future time to sample.
        #[arg(long)]
        s_max: Option<f64>,
        /// Number of evenly spaced samples.
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Label every grid state stop / continue / indifferent under the start rule.
    Classify,
    /// Cross-check simulation against the closed forms; nonzero exit on failure.
    Validate,
    /// The finite-horizon quitting example: naive rule, one improvement, two.
    Smoking {
        /// Deadline by which stopping is forced.
        #[arg(long)]
        t_max: Option<f64>,
        /// Number of evenly spaced evaluation times.
        #[arg(long)]
        grid_points: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };

    if let Some(v) = cli.beta {
        cfg.beta = v;
    }
    if let Some(v) = cli.discount {
        cfg.discount = v;
    }
    if let Some(v) = cli.start_threshold {
        cfg.start_threshold = Some(v);
    }
    if let Some(v) = cli.grid_n {
        cfg.grid_n = v;
    }
    if let Some(v) = cli.n_paths {
        cfg.n_paths = v;
    }
    if let Some(v) = cli.dt {
        cfg.dt = Some(v);
    }
    if let Some(v) = cli.horizon {
        cfg.horizon = Some(v);
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Ok(raw) = std::env::var("EQSTOP_SEED") {
        cfg.seed = raw.trim().parse().map_err(|_| {
            CliError::usage(format!(
                "EQSTOP_SEED must be an unsigned integer, got {raw:?}"
            ))
        })?;
    }
    if let Some(v) = cli.out {
        cfg.out = Some(v);
    }
    if let Some(v) = cli.format {
        cfg.format = v;
    }

    match cli.command {
        Command::Constants => {
            cfg.validate()?;
            commands::cmd_constants(&cfg)
        }
        Command::Iterate { problem, max_steps } => {
            if let Some(p) = problem {
                cfg.problem = p;
            }
            if let Some(m) = max_steps {
                cfg.max_steps = m;
            }
            cfg.validate()?;
            commands::cmd_iterate(&cfg)
        }
        Command::Boundary { t, s_max, n_samples } => {
            if let Some(v) = t {
                cfg.t = v;
            }
            if let Some(v) = s_max {
                cfg.s_max = v;
            }
            if let Some(v) = n_samples {
                cfg.n_samples = v;
            }
            cfg.validate()?;
            commands::cmd_boundary(&cfg)
        }
        Command::Classify => {
            cfg.validate()?;
            commands::cmd_classify(&cfg)
        }
        Command::Validate => {
            cfg.validate()?;
            commands::cmd_validate(&cfg)
        }
        Command::Smoking { t_max, grid_points } => {
            if let Some(v) = t_max {
                cfg.t_max = v;
            }
            if let Some(v) = grid_points {
                cfg.smoking_grid = v;
            }
            cfg.validate()?;
            commands::cmd_smoking(&cfg)
        }
    }
}
