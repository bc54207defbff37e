//! `seqbo` command line.
//!
//! Exit codes: 0 success, 1 validation violations, 2 fixture or I/O error,
//! 3 configuration error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use seqbo::campaign::{run_campaign, write_outputs, Environment};
use seqbo::config::{CampaignConfig, Overrides, FIXTURE_ROOT_ENV};
use seqbo::error::exit;
use seqbo::{report, validate, Result, SeqboError};

#[derive(Parser, Debug)]
#[command(name = "seqbo", version, about = "Batch Bayesian optimization campaigns over protein sequences")]
#[command(after_help = format!(
    "Relative fixture paths resolve against ${FIXTURE_ROOT_ENV} when set, otherwise against the config file's directory.\n\
     Exit codes: 0 ok, 1 validation, 2 fixture, 3 config, 4 numerical."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a campaign and write its logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Debug logging and per-generation GA fronts.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Check a config and its fixtures without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Summarize finished runs as plot-ready tables.
    Report {
        /// Directory searched recursively for `rounds.csv`.
        dir: PathBuf,
        /// Write `best_so_far.csv` and `rmsd.csv` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        verbose: bool,
    },
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn load(config: &PathBuf, seed: Option<u64>, method: Option<String>, rounds: Option<usize>) -> Result<CampaignConfig> {
    let mut cfg = CampaignConfig::load(config)?;
    cfg.apply(&Overrides { seed, method, rounds });
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            method,
            rounds,
            verbose,
        } => {
            init_logging(verbose);
            let cfg = load(&config, seed, method, rounds)?;
            let start = Instant::now();
            let env = Environment::build(cfg)?;
            log::info!(
                "{}: {} repeat(s), {} round(s), seed {}",
                env.method.name,
                env.config.protocol.repeats,
                env.config.protocol.rounds,
                env.config.seed
            );
            let logs = run_campaign(&env, verbose)?;
            write_outputs(&out, &env, &logs)?;
            log::info!("wrote {} in {:.1?}", out.display(), start.elapsed());
            Ok(())
        }
        Command::Validate {
            config,
            seed,
            method,
            rounds,
            verbose,
        } => {
            init_logging(verbose);
            let cfg = load(&config, seed, method, rounds)?;
            let v = validate::validate(&cfg);
            if v.is_empty() {
                println!("{}: ok", config.display());
                Ok(())
            } else {
                Err(SeqboError::Validation(v))
            }
        }
        Command::Report { dir, out, verbose } => {
            init_logging(verbose);
            let summary = report::summarize(&dir)?;
            log::info!("{} log(s), methods {:?}", summary.sources.len(), summary.methods());
            if let Some(text) = report::emit(&summary, out.as_deref())? {
                print!("{text}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
