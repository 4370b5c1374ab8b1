use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hsav::cli;

#[derive(Parser)]
#[command(
    name = "hsav",
    version,
    about = "Energy-stable SAV time integrators for gradient-flow PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration
    Run {
        config: PathBuf,
        /// Override a config key, e.g. --set dt=0.1 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Overwrite outputs of a previous run
        #[arg(long)]
        force: bool,
        /// Also write node-listed CSV next to each field snapshot
        #[arg(long = "csv-fields")]
        csv_fields: bool,
        /// Worker threads for sweep experiments (default: all cores)
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
    /// Schema-check a configuration and print the resolved form
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the s-stage Gauss Butcher table and its stability report
    Tableau { stages: usize },
}

fn dispatch(command: Command) -> hsav::Result<()> {
    match command {
        Command::Run {
            config,
            set,
            force,
            csv_fields,
            threads,
        } => {
            if let Some(n) = threads {
                // A pool may already exist (repeat invocations in tests);
                // the existing pool then wins.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            let (parsed, resolved) = cli::load_config(&config, &set)?;
            let prepared = cli::prepare(parsed, resolved)?;
            cli::run(prepared, force, csv_fields)
        }
        Command::Validate { config, set } => cli::validate(&config, &set),
        Command::Tableau { stages } => {
            print!("{}", cli::describe_tableau(stages)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
