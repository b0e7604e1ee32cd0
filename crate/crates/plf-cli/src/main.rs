use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};

use plf_cli::{cmd_compare, cmd_learn, cmd_mcs, cmd_parse_check, cmd_test, load_config, resolve};

#[derive(Parser)]
#[command(
    name = "plf",
    about = "Probabilistic load flow: GP surrogates for bus voltages with Monte-Carlo baselines",
    version
)]
struct Cli {
    /// Study configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true, env = "PLF_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true, env = "PLF_JOBS")]
    jobs: Option<usize>,
    /// Format of the emitted summary tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for plf_cli::OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => plf_cli::OutputFormat::Csv,
            Format::Json => plf_cli::OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a case file.
    ParseCheck {
        /// Case file; defaults to the config's `case` entry.
        #[arg(long)]
        case: Option<PathBuf>,
    },
    /// Learn one voltage surrogate per target bus.
    Learn,
    /// Evaluate learned surrogates under the configured test distribution.
    Test,
    /// Monte-Carlo baseline through the full solver.
    Mcs,
    /// Learn, then compare surrogate and Monte-Carlo on paired samples.
    Compare,
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::ParseCheck { case: Some(path) } = &cli.command {
        let outcome = cmd_parse_check(path)?;
        print!("{}", outcome.summary);
        return Ok(true);
    }

    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| anyhow!("--config PATH is required for this command"))?;
    let mut config = load_config(&config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    let out_override = cli.out.clone();
    let config_dir = config_path
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let out_dir = out_override.unwrap_or_else(|| config_dir.join(&config.out_dir));

    if let Command::ParseCheck { case: None } = &cli.command {
        let outcome = cmd_parse_check(&config_dir.join(&config.case))?;
        print!("{}", outcome.summary);
        return Ok(true);
    }

    let study = resolve(config, &config_dir)?;
    if study.jobs > 0 {
        // a second configuration attempt in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(study.jobs)
            .build_global();
    }

    let format = cli.format.into();
    let outcome = match cli.command {
        Command::Learn => cmd_learn(&study, &out_dir, format)?,
        Command::Test => cmd_test(&study, &out_dir, format)?,
        Command::Mcs => cmd_mcs(&study, &out_dir, format)?,
        Command::Compare => cmd_compare(&study, &out_dir, format)?,
        Command::ParseCheck { .. } => unreachable!("handled above"),
    };
    print!("{}", outcome.summary);
    if !outcome.all_converged {
        eprintln!("warning: at least one target did not converge within budget");
    }
    Ok(outcome.all_converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
