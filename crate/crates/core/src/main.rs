use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use uqmargins::error::{Error, Result};
use uqmargins::harness::{execute, Command, RunConfig, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Reference forced-response curve.
    Frc,
    /// Expand the uncertainty at every seed frequency.
    Expand,
    /// Propagate marginal points saved by `expand`.
    Propagate,
    /// Expansion, propagation and deduplication.
    Margins,
    /// Compare margins with curves sampled over the uncertainty disc.
    GridValidate,
    /// Radius sweep and bisection for the emergence of a closed margin.
    IsolaScan,
    /// Linear natural frequencies.
    Natfreq,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Frc => Command::Frc,
            Cmd::Expand => Command::Expand,
            Cmd::Propagate => Command::Propagate,
            Cmd::Margins => Command::Margins,
            Cmd::GridValidate => Command::GridValidate,
            Cmd::IsolaScan => Command::IsolaScan,
            Cmd::Natfreq => Command::Natfreq,
        }
    }
}

/// Response margins of forced periodic orbits under bounded parametric uncertainty.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, used when no configuration file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for seed expansions and the grid oracle.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated seed frequencies replacing those of the configuration.
    #[arg(long, value_delimiter = ',')]
    seed_omegas: Option<Vec<f64>>,
    /// Uncertainty radius replacing that of the configuration.
    #[arg(long)]
    radius: Option<f64>,
    /// Marginal points written by `expand`, for `propagate`.
    #[arg(long)]
    marginal: Option<PathBuf>,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
    };
    if let Some(seeds) = &cli.seed_omegas {
        config.margins.seeds = seeds.clone();
    }
    if let Some(r) = cli.radius {
        config.radius = r;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let options = RunOptions {
        out: cli.out.clone(),
        marginal: cli.marginal.clone(),
    };
    let outcome = execute(cli.command.into(), &config, &options)?;
    println!("{}", outcome.dir.display());
    if !outcome.manifest.summary.is_null() {
        println!("{}", serde_json::to_string_pretty(&outcome.manifest.summary)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
