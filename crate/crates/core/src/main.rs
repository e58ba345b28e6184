use clap::{Parser, Subcommand};
use leadfield::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "leadfield",
    about = "Lead-field ECG simulation with uncertainty quantification for electrode placement",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides run.output_dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed (overrides run.seed from the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the mesh and write text + VTK artifacts.
    Mesh,
    /// Solve the activation model and export arrival times.
    Activation,
    /// Run the statistics pipeline: expectation, correlation, bands.
    Uq,
    /// Per-time-step forward conduction solve with boundary traces.
    Forward,
    /// Cross-check the pipeline against the forward and dense oracles.
    Validate,
    /// Monte-Carlo agreement reports.
    Mc {
        /// Number of electrode samples.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

fn run(cli: Cli) -> Result<i32, leadfield::error::Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| leadfield::error::Error::Config(format!("thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .ok_or_else(|| leadfield::error::Error::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::from_path(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    let out = cli
        .out
        .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));

    match cli.command {
        Command::Mesh => {
            leadfield::cli::cmd_mesh(&cfg, &out)?;
        }
        Command::Activation => {
            leadfield::cli::cmd_activation(&cfg, &out)?;
        }
        Command::Uq => {
            leadfield::cli::cmd_uq(&cfg, &out)?;
        }
        Command::Forward => {
            leadfield::cli::cmd_forward(&cfg, &out)?;
        }
        Command::Validate => {
            let outcome = leadfield::cli::cmd_validate(&cfg, &out)?;
            if !outcome.all_passed {
                eprintln!("validation checks failed; see validation.csv");
                return Ok(2);
            }
        }
        Command::Mc { samples } => {
            leadfield::cli::cmd_mc(&cfg, &out, samples)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
