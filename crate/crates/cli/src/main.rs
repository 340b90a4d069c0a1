use std::path::PathBuf;
use std::process::ExitCode;

use acdc_cli::commands;
use acdc_cli::config::parse_config;
use acdc_cli::export::ExportKind;
use acdc_cli::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acdc", version, about = "Coevolve model genomes and tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory.
        #[arg(long, default_value = "acdc-run")]
        out: PathBuf,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Select a task force from the historical archive.
    SelectTaskforce {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "coverage")]
        strategy: String,
    },
    /// Coverage of a set of models on the global or a held-out task set.
    EvalCoverage {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated ids, e.g. m00001,m00017
        #[arg(long)]
        models: String,
        /// JSON Lines task file.
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Print the ancestry of a model.
    Lineage {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Write plot data as CSV.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out } => {
            let mut config = parse_config(&config)?;
            if let Some(seed) = seed {
                config.run_seed = seed;
            }
            print_json(&commands::run(&config, &out)?);
        }
        Command::Resume { manifest } => print_json(&commands::resume(&manifest)?),
        Command::SelectTaskforce { manifest, n, strategy } => {
            let strategy = strategy.parse().map_err(CliError::Usage)?;
            print_json(&commands::select_taskforce(&manifest, n, strategy)?);
        }
        Command::EvalCoverage { manifest, models, holdout } => {
            let ids = commands::parse_model_ids(&models)?;
            print_json(&commands::eval_coverage(&manifest, &ids, holdout.as_deref())?);
        }
        Command::Lineage { manifest, model } => {
            let id = model.parse().map_err(CliError::Usage)?;
            print!("{}", commands::lineage(&manifest, id)?);
        }
        Command::Export { manifest, kind, out } => {
            let kind: ExportKind = kind.parse()?;
            let rows = commands::export(&manifest, kind, &out)?;
            eprintln!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
